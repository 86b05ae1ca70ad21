use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::Result;
use crate::perturb::PerturbationBasis;
use crate::verify::CountVector;

/// One slot of the average count vector next to the basis value there.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlotRow {
    pub slot: usize,
    pub cbar: f64,
    pub phi: f64,
}

/// Rows for plotting the average count vector against `phi_{k_p}`. Empty
/// when nothing was counted.
pub fn emit_distribution_plotdata(
    counts: &CountVector,
    k_p: u64,
    basis: &PerturbationBasis,
) -> Result<Vec<PlotRow>> {
    if counts.n_counted == 0 {
        return Ok(Vec::new());
    }
    let phi = basis.vector(k_p)?;
    Ok(counts
        .average()
        .into_iter()
        .zip(&phi.values)
        .enumerate()
        .map(|(slot, (cbar, &phi))| PlotRow { slot, cbar, phi })
        .collect())
}

pub fn plotdata_csv(rows: &[PlotRow]) -> String {
    let mut out = String::from("slot,cbar,phi\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.slot, r.cbar, r.phi));
    }
    out
}

/// Least-squares sinusoid amplitude of `values` at frequencies
/// `1..=|V|/2`, as `2 |X[f]| / |V|` (`|X[f]| / |V|` at the Nyquist
/// frequency). Index `f - 1` holds frequency `f`.
pub fn frequency_amplitudes(values: &[f64]) -> Vec<f64> {
    let v = values.len();
    if v < 2 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(v).process(&mut buf);
    (1..=v / 2)
        .map(|f| {
            let scale = if 2 * f == v { 1.0 } else { 2.0 };
            scale * buf[f].norm() / v as f64
        })
        .collect()
}
