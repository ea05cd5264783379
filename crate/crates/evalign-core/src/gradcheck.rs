//! Finite-difference gradient verification.
//!
//! The central-difference oracle only calls forward loss evaluations, so it
//! stays independent of the reverse-mode path it checks.

use ndarray::Array2;

use crate::encoder::{encode_event, EncoderParams, ParamMap};
use crate::error::Result;
use crate::event::EventFrame;

/// Encodes a batch of event frames into stacked embedding rows (N x z).
pub fn encode_event_rows(encoder: &EncoderParams, frames: &[EventFrame]) -> Result<Array2<f64>> {
    let z = match &encoder.arch {
        crate::encoder::Arch::Vision(a) => a.z,
        crate::encoder::Arch::Text(a) => a.z,
    };
    let mut rows = Array2::zeros((frames.len(), z));
    for (i, frame) in frames.iter().enumerate() {
        let e = encode_event(encoder, frame)?;
        rows.row_mut(i).assign(e.as_array());
    }
    Ok(rows)
}

/// Central-difference gradient of `f` with respect to every parameter
/// coordinate of `encoder`, at step size `h`.
pub fn finite_difference_grad<F>(encoder: &EncoderParams, h: f64, f: F) -> Result<ParamMap>
where
    F: Fn(&EncoderParams) -> Result<f64>,
{
    let mut probe = encoder.clone();
    let mut grads = encoder.params.zeros_like();
    let names: Vec<String> = encoder.params.names().cloned().collect();
    for name in names {
        let len = encoder.params.get(&name).map(|p| p.len()).unwrap_or(0);
        for i in 0..len {
            let orig = probe.params.get(&name).unwrap().data[i];
            probe.params.get_mut(&name).unwrap().data[i] = orig + h;
            let plus = f(&probe)?;
            probe.params.get_mut(&name).unwrap().data[i] = orig - h;
            let minus = f(&probe)?;
            probe.params.get_mut(&name).unwrap().data[i] = orig;
            grads.get_mut(&name).unwrap().data[i] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// L2 relative error between two gradient maps, treating each as one flat
/// vector: ||a - b|| / max(||b||, tiny).
pub fn l2_relative_error(a: &ParamMap, b: &ParamMap) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (name, pa) in a.iter() {
        let pb = b.get(name).expect("gradient maps share parameter names");
        for (&x, &y) in pa.data.iter().zip(pb.data.iter()) {
            num += (x - y) * (x - y);
            den += y * y;
        }
    }
    num.sqrt() / den.sqrt().max(1e-300)
}
