use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::Model;

pub const SPLINE_CSV_HEADER: &str = "epoch,layer,out_channel,in_channel,tap,coeff_index,value";

/// Writes every spline coefficient of every KAConv layer as one CSV row and
/// returns the number of data rows.
pub fn export_splines(model: &Model, epoch: usize, out_path: impl AsRef<Path>) -> Result<usize> {
    let file = std::fs::File::create(out_path.as_ref())?;
    let mut out = BufWriter::new(file);
    let rows = write_splines(model, epoch, &mut out)?;
    out.flush()?;
    Ok(rows)
}

pub fn write_splines<W: Write>(model: &Model, epoch: usize, mut out: W) -> Result<usize> {
    let layers = model.kaconv_layers();
    if layers.is_empty() {
        return Err(Error::UnsupportedModel(format!(
            "{} has no spline kernels to export",
            model.spec.variant
        )));
    }
    writeln!(out, "{SPLINE_CSV_HEADER}")?;
    let mut rows = 0;
    for (layer_index, layer) in layers {
        let weight = model.params.value(layer.spline_weight);
        let &[c_out, c_in, taps, nb] = weight.shape() else {
            return Err(Error::InvalidState(format!(
                "spline weight of layer {layer_index} has shape {:?}",
                weight.shape()
            )));
        };
        let mut values = weight.data().iter();
        for o in 0..c_out {
            for i in 0..c_in {
                for t in 0..taps {
                    for c in 0..nb {
                        let v = values.next().expect("shape matches data length");
                        writeln!(out, "{epoch},{layer_index},{o},{i},{t},{c},{v:e}")?;
                        rows += 1;
                    }
                }
            }
        }
    }
    Ok(rows)
}
