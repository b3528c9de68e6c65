//! Memory price history ingestion and log-linear trend fitting.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const YEAR_RANGE: (f64, f64) = (1950.0, 2100.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriceError {
    #[error("missing mandatory column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: cannot parse `{column}`: {reason}")]
    Parse {
        row: usize,
        column: String,
        reason: String,
    },
    #[error("need at least 2 points in window, found {found}")]
    InsufficientData { found: usize },
    #[error("all points in window share the same year")]
    DegenerateWindow,
    #[error("price index has no entry for {0}")]
    MissingEndpoint(i32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub year: f64,
    pub usd_per_gb: f64,
    pub size_kb: Option<f64>,
    pub cost_usd: Option<f64>,
    pub description: String,
}

impl PricePoint {
    pub fn new(year: f64, usd_per_gb: f64) -> Self {
        Self {
            year,
            usd_per_gb,
            size_kb: None,
            cost_usd: None,
            description: String::new(),
        }
    }
}

/// Ingested points plus the rows skipped in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceHistory {
    pub points: Vec<PricePoint>,
    pub skipped: Vec<PriceError>,
}

/// Parses `year,usd_per_gb[,size_kb,cost_usd,description]` CSV text.
///
/// Row numbers in errors are 1-based and count the header as row 1. In
/// strict mode the first malformed row is an error; in lenient mode it is
/// recorded in [`PriceHistory::skipped`] and ingestion continues.
pub fn ingest_price_history(csv_text: &str, lenient: bool) -> Result<PriceHistory, PriceError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|_| PriceError::MissingColumn("year"))?
        .clone();
    let column = |name: &'static str| headers.iter().position(|h| h == name);
    let year_col = column("year").ok_or(PriceError::MissingColumn("year"))?;
    let price_col = column("usd_per_gb").ok_or(PriceError::MissingColumn("usd_per_gb"))?;
    let size_col = column("size_kb");
    let cost_col = column("cost_usd");
    let desc_col = column("description");

    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let parsed = record
            .map_err(|e| PriceError::Parse {
                row,
                column: "*".into(),
                reason: e.to_string(),
            })
            .and_then(|rec| {
                let field = |c: usize| rec.get(c).unwrap_or("");
                let number = |c: usize, name: &str| -> Result<f64, PriceError> {
                    field(c).parse::<f64>().map_err(|e| PriceError::Parse {
                        row,
                        column: name.into(),
                        reason: e.to_string(),
                    })
                };
                let optional = |c: Option<usize>, name: &str| -> Result<Option<f64>, PriceError> {
                    match c.map(field) {
                        None | Some("") => Ok(None),
                        Some(_) => number(c.unwrap(), name).map(Some),
                    }
                };
                let year = number(year_col, "year")?;
                let usd_per_gb = number(price_col, "usd_per_gb")?;
                if !(YEAR_RANGE.0..=YEAR_RANGE.1).contains(&year) {
                    return Err(PriceError::Parse {
                        row,
                        column: "year".into(),
                        reason: format!("{year} outside [{}, {}]", YEAR_RANGE.0, YEAR_RANGE.1),
                    });
                }
                if !(usd_per_gb > 0.0 && usd_per_gb.is_finite()) {
                    return Err(PriceError::Parse {
                        row,
                        column: "usd_per_gb".into(),
                        reason: "must be > 0".into(),
                    });
                }
                Ok(PricePoint {
                    year,
                    usd_per_gb,
                    size_kb: optional(size_col, "size_kb")?,
                    cost_usd: optional(cost_col, "cost_usd")?,
                    description: desc_col.map(field).unwrap_or("").to_string(),
                })
            });
        match parsed {
            Ok(p) => points.push(p),
            Err(e) if lenient => skipped.push(e),
            Err(e) => return Err(e),
        }
    }
    points.sort_by(|a, b| a.year.total_cmp(&b.year));
    Ok(PriceHistory { points, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrendFit {
    /// Year-over-year multiplicative change.
    pub annual_factor: f64,
    /// Fitted USD/GB at `window.0`.
    pub intercept_usd_per_gb: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

impl TrendFit {
    /// Multiplicative change over `years`.
    pub fn factor_over(&self, years: f64) -> f64 {
        self.annual_factor.powf(years)
    }
}

/// Unweighted OLS of `ln(usd_per_gb)` on `year - window.0` over points with
/// `window.0 <= year <= window.1`.
pub fn fit_trend(points: &[PricePoint], window: (f64, f64)) -> Result<TrendFit, PriceError> {
    let selected: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.year >= window.0 && p.year <= window.1)
        .map(|p| (p.year - window.0, p.usd_per_gb.ln()))
        .collect();
    let n = selected.len();
    if n < 2 {
        return Err(PriceError::InsufficientData { found: n });
    }
    let nf = n as f64;
    let mean_x = selected.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = selected.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = selected.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = selected
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let syy: f64 = selected.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if sxx == 0.0 {
        return Err(PriceError::DegenerateWindow);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = selected
            .iter()
            .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
            .sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(TrendFit {
        annual_factor: slope.exp(),
        intercept_usd_per_gb: intercept.exp(),
        r_squared,
        window,
        n_points: n,
    })
}

pub fn project_cost(fit: &TrendFit, year: f64) -> f64 {
    fit.intercept_usd_per_gb * fit.annual_factor.powf(year - fit.window.0)
}

/// Normalized HBM $/GB index anchors.
pub fn builtin_hbm_index() -> Vec<PricePoint> {
    vec![PricePoint::new(2023.0, 1.00), PricePoint::new(2025.0, 1.35)]
}

/// Ratio of the mean 2025 index value to the mean 2023 value. Points are
/// bucketed by calendar year (`floor(year)`).
pub fn hbm_trend_check(index: &[PricePoint]) -> Result<f64, PriceError> {
    let mean_in = |y: i32| {
        let vals: Vec<f64> = index
            .iter()
            .filter(|p| p.year.floor() as i32 == y)
            .map(|p| p.usd_per_gb)
            .collect();
        if vals.is_empty() {
            Err(PriceError::MissingEndpoint(y))
        } else {
            Ok(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    Ok(mean_in(2025)? / mean_in(2023)?)
}

fn speed_grade() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"DDR[2-5]L?[- ](\d{3,4})").expect("static regex"))
}

fn module_count() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+)\s*x").expect("static regex"))
}

/// Peak bandwidth in GB/s of the modules in a listing, from its DDR speed
/// grade (MT/s × 8 bytes per 64-bit channel) times the leading `Nx` count.
pub fn listing_bandwidth_gbps(description: &str) -> Option<f64> {
    let mts: f64 = speed_grade().captures(description)?[1].parse().ok()?;
    let modules: f64 = module_count()
        .captures(description)
        .and_then(|c| c[1].parse().ok())
        .unwrap_or(1.0);
    Some(mts * 8.0 / 1000.0 * modules)
}

/// USD per GB/s series for rows with a cost and a parseable speed grade.
/// The result reuses [`PricePoint`] with `usd_per_gb` holding USD per GB/s.
pub fn bandwidth_cost_points(points: &[PricePoint]) -> Vec<PricePoint> {
    points
        .iter()
        .filter_map(|p| {
            let cost = p.cost_usd?;
            let bw = listing_bandwidth_gbps(&p.description)?;
            Some(PricePoint {
                usd_per_gb: cost / bw,
                ..p.clone()
            })
        })
        .collect()
}

/// Flat `key=value` report, one per line.
pub fn format_kv(fit: &TrendFit) -> String {
    let years = fit.window.1 - fit.window.0;
    format!(
        "window_start={}\nwindow_end={}\nn_points={}\nannual_factor={:.6}\nwindow_factor={:.6}\nintercept_usd_per_gb={:.6}\nr_squared={:.6}\n",
        fit.window.0,
        fit.window.1,
        fit.n_points,
        fit.annual_factor,
        fit.factor_over(years),
        fit.intercept_usd_per_gb,
        fit.r_squared
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<PricePoint> {
        v.iter().map(|&(y, p)| PricePoint::new(y, p)).collect()
    }

    #[test]
    fn parses_example_rows() {
        let h = ingest_price_history(
            "year,usd_per_gb,size_kb,cost_usd,description\n2023,2.05,,,a\n1957,411041792000,,,b\n",
            false,
        )
        .unwrap();
        assert_eq!(h.points[0].year, 1957.0);
        assert_eq!(h.points[0].usd_per_gb, 411041792000.0);
        assert_eq!(h.points[1].usd_per_gb, 2.05);
    }

    #[test]
    fn empty_file_is_missing_column() {
        assert!(matches!(
            ingest_price_history("", false),
            Err(PriceError::MissingColumn(_))
        ));
        assert_eq!(
            ingest_price_history("year\n2020\n", false),
            Err(PriceError::MissingColumn("usd_per_gb"))
        );
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let text = "year,usd_per_gb\n2020,1\n2021,abc\n2022,3\n";
        match ingest_price_history(text, false) {
            Err(PriceError::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "usd_per_gb");
            }
            other => panic!("{other:?}"),
        }
        let h = ingest_price_history(text, true).unwrap();
        assert_eq!(h.points.len(), 2);
        assert_eq!(h.skipped.len(), 1);
    }

    #[test]
    fn out_of_range_year_rejected() {
        assert!(ingest_price_history("year,usd_per_gb\n1900,1\n", false).is_err());
        assert!(ingest_price_history("year,usd_per_gb\n2000,0\n", false).is_err());
    }

    #[test]
    fn flat_series() {
        let f = fit_trend(
            &pts(&[(2020.0, 5.0), (2021.0, 5.0), (2022.0, 5.0)]),
            (2020.0, 2022.0),
        )
        .unwrap();
        assert!((f.annual_factor - 1.0).abs() < 1e-15);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn two_point_halving() {
        let f = fit_trend(&pts(&[(2020.0, 4.0), (2021.0, 2.0)]), (2020.0, 2021.0)).unwrap();
        assert!((f.annual_factor - 0.5).abs() < 1e-15);
        assert!((f.intercept_usd_per_gb - 4.0).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert_eq!(
            fit_trend(&pts(&[(2020.0, 4.0)]), (2019.0, 2021.0)),
            Err(PriceError::InsufficientData { found: 1 })
        );
        assert_eq!(
            fit_trend(&pts(&[(2020.0, 4.0), (2020.0, 3.0)]), (2019.0, 2021.0)),
            Err(PriceError::DegenerateWindow)
        );
    }

    #[test]
    fn projection() {
        let f = TrendFit {
            annual_factor: 0.5,
            intercept_usd_per_gb: 8.0,
            r_squared: 1.0,
            window: (2020.0, 2022.0),
            n_points: 2,
        };
        assert_eq!(project_cost(&f, 2020.0), 8.0);
        assert_eq!(project_cost(&f, 2022.0), 2.0);
    }

    #[test]
    fn hbm_index() {
        let r = hbm_trend_check(&builtin_hbm_index()).unwrap();
        assert!((r - 1.35).abs() < 1e-12);
        assert_eq!(
            hbm_trend_check(&pts(&[(2023.0, 3.0), (2025.0, 3.0)])).unwrap(),
            1.0
        );
        assert_eq!(
            hbm_trend_check(&pts(&[(2023.0, 1.0), (2025.0, 2.0)])).unwrap(),
            2.0
        );
        assert_eq!(
            hbm_trend_check(&pts(&[(2023.0, 1.0)])),
            Err(PriceError::MissingEndpoint(2025))
        );
    }

    #[test]
    fn speed_grades() {
        assert_eq!(
            listing_bandwidth_gbps("2x 16GB DIMM DDR4-3200 @ $1"),
            Some(51.2)
        );
        assert_eq!(listing_bandwidth_gbps("1x 32GB DDR4-2666"), Some(21.328));
        assert_eq!(
            listing_bandwidth_gbps("Kingston 32GB DDR4 3200MHz"),
            Some(25.6)
        );
        assert_eq!(listing_bandwidth_gbps("Core memory"), None);
    }
}
