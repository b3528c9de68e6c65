//! Unit conversions used at the catalog and config boundary.
//!
//! Everything inside the simulator is base SI: bytes, seconds, watts, USD.
//! Memory-vendor tables mix binary and decimal prefixes, so the conversion
//! constants are named by prefix rather than by intent.

/// Decimal gigabyte (10^9 bytes). Bandwidths and datasheet device capacities.
pub const GB: f64 = 1e9;

/// Binary gibibyte (2^30 bytes). HBM die and stack capacities.
pub const GIB: u64 = 1 << 30;

pub const MIB: u64 = 1 << 20;

pub const NS: f64 = 1e-9;

pub const US: f64 = 1e-6;

pub const TFLOPS: f64 = 1e12;

pub fn gb_to_bytes(gb: f64) -> u64 {
    (gb * GB).round() as u64
}

pub fn gib_to_bytes(gib: f64) -> u64 {
    (gib * GIB as f64).round() as u64
}

/// Division keeps round values such as 100 ns exact in the output.
pub fn ns_to_s(ns: f64) -> f64 {
    ns / 1e9
}

pub fn bytes_to_gb(bytes: u64) -> f64 {
    bytes as f64 / GB
}

/// Smallest multiple of `granularity` that is `>= bytes`.
pub fn round_up(bytes: f64, granularity: u64) -> f64 {
    let g = granularity as f64;
    (bytes / g).ceil() * g
}

/// Rounds to `digits` significant decimal digits.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - magnitude);
    let rounded = (x * scale).round() / scale;
    // Re-parse through the shortest decimal form so that equal inputs always
    // serialize to the same text.
    format!("{:.*e}", (digits - 1) as usize, rounded)
        .parse()
        .unwrap_or(rounded)
}
