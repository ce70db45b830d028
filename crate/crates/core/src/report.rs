//! CSV rendering of experiment results and parsing of tap files.

use crate::error::{Error, Result};
use crate::eval::{self, EyeHistogram};
use crate::experiment::{EyeResult, FilterSet, PowerRow, SnrRow, SpectrumResult, SummaryRow, TrainedRun};
use crate::signal::FirFilter;
use crate::train::Mode;

/// Nine significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.8e}")
}

/// Enough digits to round-trip an `f64`.
fn exact(v: f64) -> String {
    format!("{v:.16e}")
}

fn table(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

/// File stem suffix identifying a filter set: `<mode>_<n>`, plus `_seed<k>`
/// unless `seed` is the primary seed of the run.
pub fn filter_tag(mode: Mode, num_taps: usize, seed: u64, primary_seed: u64) -> String {
    if seed == primary_seed {
        format!("{mode}_{num_taps}")
    } else {
        format!("{mode}_{num_taps}_seed{seed}")
    }
}

pub fn taps_file_name(mode: Mode, num_taps: usize, seed: u64, primary_seed: u64) -> String {
    format!("taps_{}.csv", filter_tag(mode, num_taps, seed, primary_seed))
}

pub fn taps_csv(pulse_shaper: &FirFilter, rx_filter: &FirFilter) -> String {
    table(
        "index,pulse_shaper_tap,rx_filter_tap",
        pulse_shaper
            .taps()
            .iter()
            .zip(rx_filter.taps())
            .enumerate()
            .map(|(i, (p, r))| format!("{i},{},{}", exact(*p), exact(*r))),
    )
}

/// Parses a taps file into (pulse shaper, receiver filter).
pub fn parse_taps_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "index,pulse_shaper_tap,rx_filter_tap" => {}
        Some(h) => return Err(Error::Configuration(format!("taps file: unexpected header {h:?}"))),
        None => return Err(Error::Configuration("taps file is empty".into())),
    }
    let mut ps = Vec::new();
    let mut rx = Vec::new();
    for (row, line) in lines.enumerate() {
        let bad = |what: &str| Error::Configuration(format!("taps file row {}: {what}: {line:?}", row + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        if fields[0].parse::<usize>().ok() != Some(row) {
            return Err(bad("index out of sequence"));
        }
        let p: f64 = fields[1].parse().map_err(|_| bad("bad pulse_shaper_tap"))?;
        let r: f64 = fields[2].parse().map_err(|_| bad("bad rx_filter_tap"))?;
        if !p.is_finite() || !r.is_finite() {
            return Err(bad("non-finite tap"));
        }
        ps.push(p);
        rx.push(r);
    }
    if ps.is_empty() {
        return Err(Error::Configuration("taps file has no rows".into()));
    }
    Ok((ps, rx))
}

/// Recovers `(mode, num_taps, seed)` from a name produced by
/// [`taps_file_name`]; a missing seed suffix yields `None`.
pub fn parse_taps_file_name(name: &str) -> Result<(Mode, usize, Option<u64>)> {
    let bad = || Error::Configuration(format!("cannot infer mode and length from taps file name {name:?}"));
    let stem = name
        .strip_prefix("taps_")
        .and_then(|s| s.strip_suffix(".csv"))
        .ok_or_else(bad)?;
    let (stem, seed) = match stem.rsplit_once("_seed") {
        Some((rest, k)) => (rest, Some(k.parse::<u64>().map_err(|_| bad())?)),
        None => (stem, None),
    };
    let (mode, n) = stem.rsplit_once('_').ok_or_else(bad)?;
    Ok((mode.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?, seed))
}

/// Builds a frozen filter set from a taps file.
pub fn filter_set_from_csv(text: &str, mode: Mode, seed: u64) -> Result<FilterSet> {
    let (ps, rx) = parse_taps_csv(text)?;
    let n = ps.len();
    Ok(FilterSet {
        mode,
        num_taps: n,
        seed,
        pulse_shaper: FirFilter::new(ps, false)?,
        rx_filter: FirFilter::new(rx, false)?,
    })
}

pub fn loss_csv(run: &TrainedRun) -> String {
    table(
        "step,lr,loss",
        run.outcome
            .selected
            .losses
            .iter()
            .map(|r| format!("{},{},{}", r.step, num(r.lr), num(r.loss))),
    )
}

pub fn screening_csv(runs: &[TrainedRun]) -> String {
    let mut rows = Vec::new();
    for run in runs {
        for c in &run.outcome.candidates {
            rows.push(format!(
                "{},{},{},{},{},{},{}",
                run.mode,
                run.num_taps,
                run.seed,
                num(c.lr0),
                c.validation_ser.map(num).unwrap_or_default(),
                u8::from(c.lr0 == run.outcome.selected.lr0),
                c.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
            ));
        }
    }
    table("mode,num_taps,seed,lr0,validation_ser,selected,error", rows)
}

pub fn ser_vs_snr_csv(rows: &[SnrRow]) -> String {
    table(
        "snr_db,mode,num_taps,seed,ser,theory_ser",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                num(r.snr_db),
                r.mode,
                r.num_taps,
                r.seed,
                num(r.ser),
                num(r.theory_ser)
            )
        }),
    )
}

pub fn ser_vs_power_csv(rows: &[PowerRow]) -> String {
    table(
        "p_in_dbm,p_rec_dbm,mode,num_taps,seed,ser",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                num(r.p_in_dbm),
                num(r.p_rec_dbm),
                r.mode,
                r.num_taps,
                r.seed,
                num(r.ser)
            )
        }),
    )
}

/// Seed-averaged SER; `x_name` labels the swept variable.
pub fn summary_csv(x_name: &str, rows: &[SummaryRow]) -> String {
    table(
        &format!("{x_name},mode,num_taps,mean_ser,std_ser,seeds"),
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                num(r.x),
                r.mode,
                r.num_taps,
                num(r.mean_ser),
                num(r.std_ser),
                r.seeds
            )
        }),
    )
}

/// SNR needed to reach each SER target, read off the seed-averaged curves,
/// and its distance from the AWGN bound. Blank cells mean the curve never
/// crossed the target.
pub fn threshold_csv(pam_order: usize, summary: &[SummaryRow], targets: &[f64]) -> String {
    let mut keys: Vec<(Mode, usize)> = Vec::new();
    for r in summary {
        if !keys.contains(&(r.mode, r.num_taps)) {
            keys.push((r.mode, r.num_taps));
        }
    }
    let mut rows = Vec::new();
    for (mode, n) in keys {
        let curve: Vec<&SummaryRow> = summary.iter().filter(|r| r.mode == mode && r.num_taps == n).collect();
        let snr: Vec<f64> = curve.iter().map(|r| r.x).collect();
        let ser: Vec<f64> = curve.iter().map(|r| r.mean_ser).collect();
        for &t in targets {
            let at = eval::snr_at_ser(&snr, &ser, t);
            let gap = eval::gap_to_theory_db(pam_order, &snr, &ser, t);
            rows.push(format!(
                "{mode},{n},{},{},{}",
                num(t),
                at.map(num).unwrap_or_default(),
                gap.map(num).unwrap_or_default()
            ));
        }
    }
    table("mode,num_taps,target_ser,snr_db,gap_to_theory_db", rows)
}

pub fn folded_spectrum_csv(results: &[SpectrumResult]) -> String {
    let mut rows = Vec::new();
    for r in results {
        for (f, db) in r.spectrum.freqs.iter().zip(r.spectrum.magnitude_db()) {
            rows.push(format!("{},{},{},{},{}", num(*f), num(db), r.mode, r.num_taps, r.seed));
        }
    }
    table("f_hz,b_mag_db,mode,num_taps,seed", rows)
}

pub fn ripple_csv(results: &[SpectrumResult]) -> String {
    table(
        "mode,num_taps,seed,ripple_db",
        results
            .iter()
            .map(|r| format!("{},{},{},{}", r.mode, r.num_taps, r.seed, num(r.ripple_db))),
    )
}

/// Sparse eye histogram: empty cells are omitted.
pub fn eye_csv(hist: &EyeHistogram) -> String {
    let mut rows = Vec::new();
    for (p, row) in hist.counts.iter().enumerate() {
        for (a, &c) in row.iter().enumerate() {
            if c > 0 {
                rows.push(format!("{p},{a},{c}"));
            }
        }
    }
    table("phase_bin,amp_bin,count", rows)
}

pub fn eye_edges_csv(hist: &EyeHistogram) -> String {
    table(
        "amp_bin,amp_low,amp_high",
        hist.edges
            .windows(2)
            .enumerate()
            .map(|(i, w)| format!("{i},{},{}", num(w[0]), num(w[1]))),
    )
}

pub fn eye_opening_csv(results: &[EyeResult]) -> String {
    table(
        "mode,num_taps,seed,p_rec_dbm,best_phase,opening",
        results.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.mode,
                r.num_taps,
                r.seed,
                num(r.p_rec_dbm),
                r.best_phase,
                num(r.opening)
            )
        }),
    )
}
