//! CSV readers and writers for intermediate and final artifacts.
//!
//! Floats are written in Rust's shortest round-trip form, so a file read
//! back reproduces the values bit for bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corrwin::{matrix_dim, CorrelationVector, MeanCorrelationSeries};
use crate::error::{Error, Result};
use crate::geometry::PcaResult;
use crate::ingest::{NormalizedReturns, PricePanel};
use crate::kramers::{KmEstimate, WindowEstimate};
use crate::states::{StateAssignment, StateClass, StepHistograms, StepSeries};

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::Reader::from_path(path)?)
}

fn expect_header(rdr: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Format {
            line: 1,
            column: None,
            message: format!("expected header `{}`, found `{}`", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line() as usize);
    let raw = rec.get(idx).ok_or_else(|| Error::Format {
        line,
        column: Some(name.to_string()),
        message: "missing field".into(),
    })?;
    raw.trim().parse().map_err(|_| Error::Format {
        line,
        column: Some(name.to_string()),
        message: format!("cannot parse `{raw}`"),
    })
}

/// Long format `date,ticker,adj_close`, dates outermost.
pub fn write_prices_long(path: &Path, panel: &PricePanel) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "ticker", "adj_close"])?;
    for (t, d) in panel.dates().iter().enumerate() {
        for (ticker, row) in panel.tickers().iter().zip(panel.prices()) {
            w.write_record([d.as_str(), ticker.as_str(), &row[t].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `date,value`
pub fn write_series(path: &Path, series: &MeanCorrelationSeries) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "value"])?;
    for (d, v) in series.dates.iter().zip(&series.values) {
        w.write_record([d.as_str(), &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series(path: &Path) -> Result<MeanCorrelationSeries> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, &["date", "value"])?;
    let (mut dates, mut values) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        dates.push(field::<String>(&rec, 0, "date")?);
        values.push(field::<f64>(&rec, 1, "value")?);
    }
    MeanCorrelationSeries::new(dates, values)
}

/// Long format `date,i,j,c_ij` over the upper triangle.
pub fn write_correlation_vectors(path: &Path, vectors: &[CorrelationVector]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "i", "j", "c_ij"])?;
    for v in vectors {
        let k = matrix_dim(v.values.len()).ok_or_else(|| Error::validation("vector length is not triangular"))?;
        let mut idx = 0;
        for i in 0..k {
            for j in i + 1..k {
                w.write_record([v.date.as_str(), &i.to_string(), &j.to_string(), &v.values[idx].to_string()])?;
                idx += 1;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_correlation_vectors(path: &Path) -> Result<Vec<CorrelationVector>> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, &["date", "i", "j", "c_ij"])?;
    let mut out: Vec<CorrelationVector> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let date: String = field(&rec, 0, "date")?;
        let value: f64 = field(&rec, 3, "c_ij")?;
        match out.last_mut() {
            Some(last) if last.date == date => last.values.push(value),
            _ => out.push(CorrelationVector { date, values: vec![value] }),
        }
    }
    if let Some(first) = out.first() {
        let d = first.values.len();
        if matrix_dim(d).is_none() || out.iter().any(|v| v.values.len() != d) {
            return Err(Error::validation("correlation vectors have inconsistent or non-triangular lengths"));
        }
    }
    Ok(out)
}

/// Wide format `date,<ticker>...`, one row per date.
pub fn write_normalized_returns(path: &Path, nr: &NormalizedReturns) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["date".to_string()];
    header.extend(nr.tickers.iter().cloned());
    w.write_record(&header)?;
    for (t, d) in nr.dates.iter().enumerate() {
        let mut row = vec![d.clone()];
        row.extend(nr.values.iter().map(|col| col[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the wide file written by [`write_normalized_returns`]. Degenerate
/// cells are not recorded in the file, so the list comes back empty.
pub fn read_normalized_returns(path: &Path, window: usize) -> Result<NormalizedReturns> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("date") || header.len() < 2 {
        return Err(Error::Format {
            line: 1,
            column: None,
            message: "expected `date` followed by ticker columns".into(),
        });
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut values = vec![Vec::new(); tickers.len()];
    for rec in rdr.records() {
        let rec = rec?;
        dates.push(field::<String>(&rec, 0, "date")?);
        for (i, t) in tickers.iter().enumerate() {
            values[i].push(field::<f64>(&rec, i + 1, t)?);
        }
    }
    Ok(NormalizedReturns {
        dates,
        tickers,
        values,
        window,
        degenerate: Vec::new(),
    })
}

/// `component,variance,fraction` followed by separate files for the
/// directions (`component,index,value`) and projections (`date,pc1,...`).
pub fn write_pca(dir: &Path, prefix: &str, dates: &[String], pca: &PcaResult) -> Result<()> {
    let mut w = writer(&dir.join(format!("{prefix}_variances.csv")))?;
    w.write_record(["component", "variance", "fraction"])?;
    for (k, v) in pca.variances.iter().enumerate() {
        let frac = if pca.total_variance > 0.0 { v / pca.total_variance } else { 0.0 };
        w.write_record([(k + 1).to_string(), v.to_string(), frac.to_string()])?;
    }
    w.flush()?;

    let mut w = writer(&dir.join(format!("{prefix}_components.csv")))?;
    w.write_record(["component", "index", "value"])?;
    for (k, comp) in pca.components.iter().enumerate() {
        for (i, x) in comp.iter().enumerate() {
            w.write_record([(k + 1).to_string(), i.to_string(), x.to_string()])?;
        }
    }
    w.flush()?;

    let mut w = writer(&dir.join(format!("{prefix}_projections.csv")))?;
    let mut header = vec!["date".to_string()];
    header.extend((1..=pca.projections.len()).map(|k| format!("pc{k}")));
    w.write_record(&header)?;
    for (t, d) in dates.iter().enumerate() {
        let mut row = vec![d.clone()];
        row.extend(pca.projections.iter().map(|p| p[t].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `date,state,class`
pub fn write_state_timeline(path: &Path, assign: &StateAssignment) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "state", "class"])?;
    for (d, &l) in assign.dates.iter().zip(&assign.labels) {
        w.write_record([d.as_str(), &l.to_string(), &assign.class_of_label(l).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a timeline and rebuilds the assignment using `cbar` for the
/// per-state means. Dates must match.
pub fn read_state_timeline(path: &Path, cbar: &MeanCorrelationSeries) -> Result<StateAssignment> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, &["date", "state", "class"])?;
    let (mut dates, mut labels, mut classes) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        dates.push(field::<String>(&rec, 0, "date")?);
        labels.push(field::<usize>(&rec, 1, "state")?);
        classes.push(field::<StateClass>(&rec, 2, "class")?);
    }
    if dates != cbar.dates {
        return Err(Error::Alignment("state timeline dates differ from the mean correlation series".into()));
    }
    StateAssignment::from_timeline(dates, labels, classes, &cbar.values)
}

/// `c,f,g2,count`
pub fn write_km(path: &Path, est: &KmEstimate) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["c", "f", "g2", "count"])?;
    for i in 0..est.len() {
        w.write_record([
            est.centers[i].to_string(),
            est.drift[i].to_string(),
            est.diffusion_sq[i].to_string(),
            est.counts[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a KM file as `(c, f, g2, count)`.
pub fn read_km(path: &Path) -> Result<Vec<(f64, f64, f64, usize)>> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, &["c", "f", "g2", "count"])?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok((field(&rec, 0, "c")?, field(&rec, 1, "f")?, field(&rec, 2, "g2")?, field(&rec, 3, "count")?))
        })
        .collect()
}

/// Long format `window_mid_date,c,V`.
pub fn write_potentials(path: &Path, windows: &[WindowEstimate]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["window_mid_date", "c", "V"])?;
    for win in windows {
        for (c, v) in win.potential.c.iter().zip(&win.potential.v) {
            w.write_record([win.mid_date.as_str(), &c.to_string(), &v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `label,c,V` for named curves such as per-state potentials.
pub fn write_labelled_curves(path: &Path, label_header: &str, curves: &[(String, Vec<f64>, Vec<f64>)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([label_header, "c", "V"])?;
    for (label, c, v) in curves {
        for (x, y) in c.iter().zip(v) {
            w.write_record([label.as_str(), &x.to_string(), &y.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `window_mid_date,c,g` diffusion points.
pub fn write_diffusion_points(path: &Path, windows: &[WindowEstimate]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["window_mid_date", "c", "g"])?;
    for win in windows {
        let est = &win.estimate;
        for i in 0..est.len() {
            if !est.clamped[i] {
                w.write_record([win.mid_date.as_str(), &est.centers[i].to_string(), &est.diffusion_sq[i].sqrt().to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_diffusion_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = reader(path)?;
    expect_header(&mut rdr, &["window_mid_date", "c", "g"])?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok((field(&rec, 1, "c")?, field(&rec, 2, "g")?))
        })
        .collect()
}

/// `date,step,increment,transition`
pub fn write_steps(path: &Path, steps: &StepSeries) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "step", "increment", "transition"])?;
    for t in 0..steps.len() {
        w.write_record([
            steps.dates[t].as_str(),
            &steps.steps[t].to_string(),
            &steps.increments[t].to_string(),
            if steps.transition[t] { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `quantity,bin_lo,bin_hi,within,transition`
pub fn write_histograms(path: &Path, h: &StepHistograms) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["quantity", "bin_lo", "bin_hi", "within", "transition"])?;
    let groups = [
        ("step", &h.step_edges, &h.steps_within, &h.steps_transition),
        ("increment", &h.increment_edges, &h.increments_within, &h.increments_transition),
    ];
    for (name, edges, within, trans) in groups {
        for b in 0..within.len() {
            w.write_record([
                name.to_string(),
                edges[b].to_string(),
                edges[b + 1].to_string(),
                within[b].to_string(),
                trans[b].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Plain text file.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}
