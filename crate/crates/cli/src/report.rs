//! Plain-text and CSV views of a network's filter diagnostics.

use std::fmt::Write as _;

use msr_core::msr::ShiftDiagnostics;

use crate::metrics::DEFLATED_BELOW;

/// `||W||` histogram bin width; the last bin collects everything above
/// `HIST_BINS * HIST_WIDTH`.
pub const HIST_WIDTH: f64 = 0.1;
pub const HIST_BINS: usize = 20;

pub fn w_norm_histogram(d: &ShiftDiagnostics) -> [usize; HIST_BINS + 1] {
    let mut h = [0; HIST_BINS + 1];
    for f in d.filters() {
        let bin = (f.w_norm / HIST_WIDTH).floor();
        h[if bin.is_finite() && bin >= 0.0 { (bin as usize).min(HIST_BINS) } else { HIST_BINS }] += 1;
    }
    h
}

/// Nearest-rank quantiles of the per-filter effective learning rate.
pub fn effective_lr_quantiles(d: &ShiftDiagnostics, qs: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = d.filters().map(|f| f.effective_lr).collect();
    if v.is_empty() {
        return vec![f64::NAN; qs.len()];
    }
    v.sort_by(f64::total_cmp);
    qs.iter().map(|q| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1]).collect()
}

/// Per-filter rows: layer, filter index, `||V||`, scale, `||W||`,
/// effective lr.
pub fn filter_rows(d: &ShiftDiagnostics) -> Vec<[String; 6]> {
    d.layers
        .iter()
        .flat_map(|l| {
            l.filters.iter().enumerate().map(move |(i, f)| {
                [
                    l.name.clone(),
                    i.to_string(),
                    f.v_norm.to_string(),
                    f.scale.to_string(),
                    f.w_norm.to_string(),
                    f.effective_lr.to_string(),
                ]
            })
        })
        .collect()
}

pub const FILTER_HEADER: [&str; 6] = ["layer", "filter", "v_norm", "scale", "w_norm", "effective_lr"];

pub fn render(d: &ShiftDiagnostics) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<28} {:<16} {:>4} {:>12} {:>9} {:>9} {:>9} {:>9} {:>9} {:>8}",
        "layer", "shape", "czm", "slice_mean", "|W|mean", "|W|min", "|W|max", "|V|min", "|V|max", "deflated"
    );
    for l in &d.layers {
        let n = l.filters.len().max(1) as f64;
        let w = |f: fn(f64, f64) -> f64, init: f64| l.filters.iter().map(|x| x.w_norm).fold(init, f);
        let v = |f: fn(f64, f64) -> f64, init: f64| l.filters.iter().map(|x| x.v_norm).fold(init, f);
        let _ = writeln!(
            s,
            "{:<28} {:<16} {:>4} {:>12.3e} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            l.name,
            format!("{:?}", l.shape),
            if l.czm_eligible { "yes" } else { "no" },
            l.max_abs_slice_mean,
            l.filters.iter().map(|x| x.w_norm).sum::<f64>() / n,
            w(f64::min, f64::INFINITY),
            w(f64::max, 0.0),
            v(f64::min, f64::INFINITY),
            v(f64::max, 0.0),
            l.filters.iter().filter(|x| x.w_norm < DEFLATED_BELOW).count(),
        );
    }
    let total = d.filters().count();
    let _ = writeln!(s, "\n|W| histogram ({total} filters):");
    for (i, c) in w_norm_histogram(d).iter().enumerate() {
        let label = if i == HIST_BINS {
            format!(">= {:.1}", HIST_BINS as f64 * HIST_WIDTH)
        } else {
            format!("[{:.1}, {:.1})", i as f64 * HIST_WIDTH, (i + 1) as f64 * HIST_WIDTH)
        };
        if *c > 0 {
            let _ = writeln!(s, "  {label:<12} {c:>6}");
        }
    }
    let _ = writeln!(s, "\ndeflated filters (|W| < {DEFLATED_BELOW}): {} of {total}", d.deflated(DEFLATED_BELOW));
    let _ = writeln!(s, "max slice mean (zero-mean layers): {:e}", d.max_slice_mean());
    let qs = [0.0, 0.25, 0.5, 0.75, 1.0];
    let e = d.effective_lrs();
    let _ = writeln!(s, "effective lr = lr / |W|^2 at lr {}: mean {:.6}", d.lr, e.mean);
    for (q, v) in qs.iter().zip(effective_lr_quantiles(d, &qs)) {
        let _ = writeln!(s, "  p{:<3} {v:.6}", (q * 100.0) as u32);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use msr_core::layers::conv::ConvFilterParams;
    use msr_core::msr::shift_diagnostics;
    use msr_core::{Layer, Network, Tensor};

    fn net(norms: &[f64]) -> Network {
        // one filter per norm, each a scaled unit vector
        let f = norms.len();
        let v = Tensor::from_fn(&[f, 1, 2, 2], |i| norms[i / 4] * 0.5).unwrap();
        Network::new(vec![Layer::Conv(ConvFilterParams::plain(v, 1, 0).unwrap())])
    }

    #[test]
    fn histogram_and_deflated() {
        let d = shift_diagnostics(&net(&[0.05, 0.5, 1.0, 1.05, 3.0]), 0.1);
        let h = w_norm_histogram(&d);
        assert_eq!(h[0], 1);
        assert_eq!(h[5], 1);
        assert_eq!(h[10], 2);
        assert_eq!(h[HIST_BINS], 1);
        assert_eq!(d.deflated(DEFLATED_BELOW), 1);
        assert!(render(&d).contains("deflated filters (|W| < 0.1): 1 of 5"));
    }

    #[test]
    fn quantiles_are_nearest_rank() {
        let d = shift_diagnostics(&net(&[1.0, 0.5, 2.0, 0.25]), 0.1);
        let q = effective_lr_quantiles(&d, &[0.0, 0.5, 1.0]);
        assert!((q[0] - 0.025).abs() < 1e-12);
        assert!((q[1] - 0.1).abs() < 1e-12);
        assert!((q[2] - 1.6).abs() < 1e-12);
    }
}
