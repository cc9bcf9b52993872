//! Price panels, daily returns and causal local normalization.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::stats;

/// Local normalization window used when none is configured.
pub const DEFAULT_NORMALIZATION_WINDOW: usize = 13;

/// Date-aligned adjusted closing prices, one row per instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<String>,
    tickers: Vec<String>,
    prices: Vec<Vec<f64>>,
}

impl PricePanel {
    /// Builds a panel from `prices[instrument][day]`.
    ///
    /// Dates must be ISO-8601 (`YYYY-MM-DD`) and strictly increasing, every
    /// row must have one price per date and all prices must be finite and
    /// strictly positive.
    pub fn new(dates: Vec<String>, tickers: Vec<String>, prices: Vec<Vec<f64>>) -> Result<Self> {
        if tickers.len() != prices.len() {
            return Err(Error::Dimension {
                expected: tickers.len(),
                got: prices.len(),
            });
        }
        if tickers.is_empty() || dates.is_empty() {
            return Err(Error::EmptyPanel);
        }
        let mut prev: Option<NaiveDate> = None;
        for d in &dates {
            let parsed = parse_date(d).ok_or_else(|| Error::validation(format!("bad date `{d}`")))?;
            if prev.is_some_and(|p| p >= parsed) {
                return Err(Error::validation(format!("dates not strictly increasing at `{d}`")));
            }
            prev = Some(parsed);
        }
        for (ticker, row) in tickers.iter().zip(&prices) {
            if row.len() != dates.len() {
                return Err(Error::Dimension {
                    expected: dates.len(),
                    got: row.len(),
                });
            }
            if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
                return Err(Error::validation(format!("non-positive price {p} for `{ticker}`")));
            }
        }
        Ok(Self {
            dates,
            tickers,
            prices,
        })
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    /// `prices()[i][t]` is the price of instrument `i` on `dates()[t]`.
    pub fn prices(&self) -> &[Vec<f64>] {
        &self.prices
    }

    pub fn n_instruments(&self) -> usize {
        self.tickers.len()
    }
}

/// Layout of a price CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriceFormat {
    /// `date,ticker,adj_close`, one row per (date, ticker).
    Long,
    /// `date,<ticker1>,<ticker2>,...`, one row per date; empty cells are gaps.
    Wide,
    /// Pick `Long` when the header is exactly the long-format header, else `Wide`.
    #[default]
    Auto,
}

impl std::str::FromStr for PriceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long" => Ok(Self::Long),
            "wide" => Ok(Self::Wide),
            "auto" => Ok(Self::Auto),
            other => Err(Error::validation(format!("unknown price format `{other}`"))),
        }
    }
}

pub fn load_prices(path: impl AsRef<Path>, format: PriceFormat) -> Result<PricePanel> {
    let file = std::fs::File::open(path)?;
    read_prices(file, format)
}

/// Parses a price CSV. Instruments that miss any date of the union of all
/// dates are dropped whole.
pub fn read_prices<R: Read>(reader: R, format: PriceFormat) -> Result<PricePanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let is_long = header.len() == 3 && header[0] == "date" && header[1] == "ticker" && header[2] == "adj_close";
    let format = match format {
        PriceFormat::Auto if is_long => PriceFormat::Long,
        PriceFormat::Auto => PriceFormat::Wide,
        f => f,
    };

    // (date -> ticker -> price)
    let mut cells: BTreeMap<NaiveDate, (String, HashMap<usize, f64>)> = BTreeMap::new();
    let mut tickers: Vec<String> = Vec::new();
    let mut ticker_index: HashMap<String, usize> = HashMap::new();

    match format {
        PriceFormat::Long => {
            if !is_long {
                return Err(Error::Format {
                    line: 1,
                    column: None,
                    message: "expected header `date,ticker,adj_close`".into(),
                });
            }
            for rec in rdr.records() {
                let rec = rec?;
                let line = line_of(&rec);
                let date_str = rec.get(0).unwrap_or_default();
                let date = parse_date(date_str).ok_or_else(|| Error::Format {
                    line,
                    column: Some("date".into()),
                    message: format!("invalid date `{date_str}`"),
                })?;
                let ticker = rec.get(1).unwrap_or_default().to_owned();
                if ticker.is_empty() {
                    return Err(Error::Format {
                        line,
                        column: Some("ticker".into()),
                        message: "empty ticker".into(),
                    });
                }
                let price = parse_price(rec.get(2).unwrap_or_default(), line, "adj_close")?;
                let idx = *ticker_index.entry(ticker.clone()).or_insert_with(|| {
                    tickers.push(ticker.clone());
                    tickers.len() - 1
                });
                let entry = cells
                    .entry(date)
                    .or_insert_with(|| (date_str.to_owned(), HashMap::new()));
                if entry.1.insert(idx, price).is_some() {
                    return Err(Error::Format {
                        line,
                        column: None,
                        message: format!("duplicate row for ({date_str}, {ticker})"),
                    });
                }
            }
        }
        PriceFormat::Wide | PriceFormat::Auto => {
            if header.first().map(String::as_str) != Some("date") || header.len() < 2 {
                return Err(Error::Format {
                    line: 1,
                    column: None,
                    message: "expected header `date,<ticker>,...`".into(),
                });
            }
            for (i, t) in header[1..].iter().enumerate() {
                if ticker_index.insert(t.clone(), i).is_some() {
                    return Err(Error::Format {
                        line: 1,
                        column: Some(t.clone()),
                        message: "duplicate ticker column".into(),
                    });
                }
                tickers.push(t.clone());
            }
            for rec in rdr.records() {
                let rec = rec?;
                let line = line_of(&rec);
                let date_str = rec.get(0).unwrap_or_default();
                let date = parse_date(date_str).ok_or_else(|| Error::Format {
                    line,
                    column: Some("date".into()),
                    message: format!("invalid date `{date_str}`"),
                })?;
                let mut row = HashMap::new();
                for (i, cell) in rec.iter().skip(1).enumerate() {
                    if cell.is_empty() {
                        continue;
                    }
                    row.insert(i, parse_price(cell, line, &header[i + 1])?);
                }
                if cells.insert(date, (date_str.to_owned(), row)).is_some() {
                    return Err(Error::Format {
                        line,
                        column: Some("date".into()),
                        message: format!("duplicate date `{date_str}`"),
                    });
                }
            }
        }
    }

    let n_dates = cells.len();
    let keep: Vec<usize> = (0..tickers.len())
        .filter(|i| cells.values().all(|(_, row)| row.contains_key(i)))
        .collect();
    if n_dates == 0 || keep.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let dropped = tickers.len() - keep.len();
    if dropped > 0 {
        log::info!("dropped {dropped} instrument(s) with incomplete coverage");
    }
    let dates: Vec<String> = cells.values().map(|(d, _)| d.clone()).collect();
    let prices = keep
        .iter()
        .map(|i| cells.values().map(|(_, row)| row[i]).collect())
        .collect();
    let tickers = keep.iter().map(|&i| tickers[i].clone()).collect();
    PricePanel::new(dates, tickers, prices)
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn parse_price(cell: &str, line: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(p) if p.is_finite() && p > 0.0 => Ok(p),
        Ok(p) => Err(Error::Format {
            line,
            column: Some(column.to_owned()),
            message: format!("price must be finite and positive, got {p}"),
        }),
        Err(_) => Err(Error::Format {
            line,
            column: Some(column.to_owned()),
            message: format!("non-numeric price `{cell}`"),
        }),
    }
}

/// Simple daily returns. `dates()[t]` is the day on which return `t` is
/// realized, i.e. the later of the two price dates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    pub dates: Vec<String>,
    pub tickers: Vec<String>,
    /// `returns[i][t]`
    pub returns: Vec<Vec<f64>>,
}

impl ReturnMatrix {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

pub fn compute_returns(panel: &PricePanel) -> Result<ReturnMatrix> {
    let n = panel.dates.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            what: "returns",
            needed: 2,
            got: n,
        });
    }
    let returns = panel
        .prices
        .iter()
        .map(|row| row.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect())
        .collect();
    Ok(ReturnMatrix {
        dates: panel.dates[1..].to_vec(),
        tickers: panel.tickers.clone(),
        returns,
    })
}

/// Returns standardized against their own trailing window.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedReturns {
    pub dates: Vec<String>,
    pub tickers: Vec<String>,
    /// `values[i][t]`
    pub values: Vec<Vec<f64>>,
    pub window: usize,
    /// `(instrument, column)` cells whose trailing window had zero variance.
    /// Those cells hold 0.
    pub degenerate: Vec<(usize, usize)>,
}

impl NormalizedReturns {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_instruments(&self) -> usize {
        self.values.len()
    }
}

/// Causal local normalization: each return is centred and scaled by the
/// mean and population standard deviation of the `n` most recent returns,
/// itself included. The output has `N - n + 1` columns aligned with the last
/// dates of the input.
pub fn locally_normalize(ret: &ReturnMatrix, n: usize) -> Result<NormalizedReturns> {
    if n < 2 {
        return Err(Error::validation("normalization window must be at least 2"));
    }
    if ret.len() < n {
        return Err(Error::InsufficientData {
            what: "local normalization",
            needed: n,
            got: ret.len(),
        });
    }
    let m = ret.len() - n + 1;
    let mut degenerate = Vec::new();
    let values = ret
        .returns
        .iter()
        .enumerate()
        .map(|(i, row)| {
            (0..m)
                .map(|s| {
                    let window = &row[s..s + n];
                    let (mu, sd) = stats::mean_std(window);
                    let scale = window.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
                    if sd <= 1e-12 * scale || sd == 0.0 {
                        degenerate.push((i, s));
                        0.0
                    } else {
                        (row[s + n - 1] - mu) / sd
                    }
                })
                .collect()
        })
        .collect();
    Ok(NormalizedReturns {
        dates: ret.dates[n - 1..].to_vec(),
        tickers: ret.tickers.clone(),
        values,
        window: n,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn returns_of(rows: Vec<Vec<f64>>) -> ReturnMatrix {
        let n = rows[0].len();
        ReturnMatrix {
            dates: (0..n).map(|t| format!("d{t}")).collect(),
            tickers: (0..rows.len()).map(|i| format!("T{i}")).collect(),
            returns: rows,
        }
    }

    fn panel(prices: Vec<Vec<f64>>) -> PricePanel {
        let n = prices[0].len();
        let dates = crate::sde_sim::business_dates(n);
        let tickers = (0..prices.len()).map(|i| format!("T{i}")).collect();
        PricePanel::new(dates, tickers, prices).unwrap()
    }

    const LONG: &str = "date,ticker,adj_close
2020-01-02,A,10
2020-01-02,B,20
2020-01-02,C,30
2020-01-03,A,11
2020-01-03,B,21
2020-01-03,C,31
2020-01-06,A,12
2020-01-06,B,22
2020-01-06,C,32
2020-01-07,A,13
2020-01-07,B,23
2020-01-07,C,33
";

    #[test]
    fn loads_complete_long_panel() {
        let p = read_prices(LONG.as_bytes(), PriceFormat::Auto).unwrap();
        assert_eq!(p.n_instruments(), 3);
        assert_eq!(p.dates().len(), 4);
        assert_eq!(p.prices()[1], vec![20.0, 21.0, 22.0, 23.0]);
    }

    #[test]
    fn drops_instrument_with_gap() {
        let csv: String = LONG.lines().filter(|l| *l != "2020-01-06,B,22").map(|l| format!("{l}\n")).collect();
        let p = read_prices(csv.as_bytes(), PriceFormat::Long).unwrap();
        assert_eq!(p.tickers(), &["A".to_string(), "C".to_string()]);
        assert_eq!(p.dates().len(), 4);
    }

    #[test]
    fn wide_format_gap_and_unordered_rows() {
        let csv = "date,A,B\n2020-01-03,2,4\n2020-01-02,1,\n2020-01-06,3,5\n";
        let p = read_prices(csv.as_bytes(), PriceFormat::Auto).unwrap();
        assert_eq!(p.tickers(), &["A".to_string()]);
        assert_eq!(p.dates()[0], "2020-01-02");
        assert_eq!(p.prices()[0], vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn non_numeric_cell_is_named() {
        let csv = LONG.replace("2020-01-06,B,22", "2020-01-06,B,abc");
        let err = read_prices(csv.as_bytes(), PriceFormat::Long).unwrap_err();
        match err {
            Error::Format { line, column, .. } => {
                assert_eq!(line, 9);
                assert_eq!(column.as_deref(), Some("adj_close"));
            }
            e => panic!("unexpected {e}"),
        }
        let wide = "date,A,B\n2020-01-02,1,x\n";
        let err = read_prices(wide.as_bytes(), PriceFormat::Wide).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, column: Some(ref c), .. } if c == "B"));
    }

    #[test]
    fn empty_panel_when_no_full_coverage() {
        let csv = "date,ticker,adj_close\n2020-01-02,A,1\n2020-01-03,B,2\n";
        assert!(matches!(
            read_prices(csv.as_bytes(), PriceFormat::Long),
            Err(Error::EmptyPanel)
        ));
    }

    #[test]
    fn rejects_nonpositive_price() {
        let csv = "date,A\n2020-01-02,0\n";
        assert!(matches!(read_prices(csv.as_bytes(), PriceFormat::Wide), Err(Error::Format { .. })));
    }

    #[test]
    fn returns_examples() {
        let r = compute_returns(&panel(vec![vec![100.0, 110.0, 99.0]])).unwrap();
        assert!((r.returns[0][0] - 0.10).abs() < 1e-15);
        assert!((r.returns[0][1] + 0.10).abs() < 1e-15);
        let r = compute_returns(&panel(vec![vec![50.0; 3]])).unwrap();
        assert_eq!(r.returns[0], vec![0.0, 0.0]);
        let r = compute_returns(&panel(vec![vec![1.0, 2.0, 4.0, 8.0]])).unwrap();
        assert_eq!(r.returns[0], vec![1.0, 1.0, 1.0]);
        assert_eq!(r.dates, vec!["2000-01-04", "2000-01-05", "2000-01-06"]);
    }

    #[test]
    fn returns_need_two_dates() {
        let err = compute_returns(&panel(vec![vec![1.0]])).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { .. }));
    }

    #[test]
    fn constant_series_normalizes_to_zero() {
        let r = returns_of(vec![vec![0.01; 30]]);
        let out = locally_normalize(&r, 13).unwrap();
        assert_eq!(out.len(), 18);
        assert!(out.values[0].iter().all(|v| *v == 0.0));
        assert_eq!(out.degenerate.len(), 18);
    }

    #[test]
    fn linear_trend_gives_constant_output() {
        let n = 13;
        let r = returns_of(vec![(0..60).map(|t| t as f64).collect()]);
        let out = locally_normalize(&r, n).unwrap();
        // Direct evaluation of the window formula for the window 0..n.
        let w: Vec<f64> = (0..n).map(|t| t as f64).collect();
        let mu = w.iter().sum::<f64>() / n as f64;
        let sd = (w.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
        let expected = (w[n - 1] - mu) / sd;
        for v in &out.values[0] {
            assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
        }
        assert!(out.degenerate.is_empty());
    }

    #[test]
    fn dates_align_with_tail() {
        let r = returns_of(vec![(0..20).map(|t| (t as f64).sin()).collect()]);
        let out = locally_normalize(&r, 5).unwrap();
        assert_eq!(out.dates, r.dates[4..].to_vec());
    }

    #[test]
    fn normalization_rejects_short_input() {
        let r = returns_of(vec![vec![0.1, 0.2]]);
        assert!(locally_normalize(&r, 13).is_err());
        assert!(locally_normalize(&r, 1).is_err());
    }

    proptest! {
        #[test]
        fn returns_are_scale_invariant(prices in prop::collection::vec(0.1f64..1e4, 2..40), k in 0.5f64..8.0) {
            // Powers of two keep the products exact.
            let scale = k.log2().round().exp2();
            let a = compute_returns(&panel(vec![prices.clone()])).unwrap();
            let b = compute_returns(&panel(vec![prices.iter().map(|p| p * scale).collect()])).unwrap();
            prop_assert_eq!(a.returns, b.returns);
        }

        #[test]
        fn normalization_is_affine_invariant(
            xs in prop::collection::vec(-1.0f64..1.0, 20..60),
            a in 0.1f64..10.0,
            b in -1.0f64..1.0,
        ) {
            let r1 = returns_of(vec![xs.clone()]);
            let r2 = returns_of(vec![xs.iter().map(|x| a * x + b).collect()]);
            let o1 = locally_normalize(&r1, 13).unwrap();
            let o2 = locally_normalize(&r2, 13).unwrap();
            for (u, v) in o1.values[0].iter().zip(&o2.values[0]) {
                prop_assert!((u - v).abs() < 1e-12 * (1.0 + u.abs()), "{} vs {}", u, v);
            }
        }
    }
}
