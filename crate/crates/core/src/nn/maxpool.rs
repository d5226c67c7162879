use crate::error::{Error, Result};
use crate::tensor::{LayerGeometry, LayerKind, Real, Tensor};

/// Winning input positions recorded by [`maxpool_forward`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxPoolIndices {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// Flat index into the input for every output cell.
    pub argmax: Vec<usize>,
}

/// Window maximum per channel. Padded positions are never candidates; ties go
/// to the first position in row-major window order.
pub fn maxpool_forward<T: Real>(input: &Tensor<T>, geom: &LayerGeometry) -> Result<(Tensor<T>, MaxPoolIndices)> {
    if geom.kind != LayerKind::MaxPool {
        return Err(Error::config("maxpool called with a non-maxpool geometry"));
    }
    if input.rank() != 3 {
        return Err(Error::config(format!("maxpool expects CxHxW input, got {:?}", input.shape())));
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let ho = geom.output_extent(h)?;
    let wo = geom.output_extent(w)?;
    let (k, s, p) = (geom.kernel, geom.stride, geom.padding);

    let mut out = Tensor::zeros(&[c, ho, wo]);
    let mut argmax = vec![0usize; c * ho * wo];
    let x = input.data();
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best: Option<(T, usize)> = None;
                for u in 0..k {
                    let y = (i * s + u) as isize - p as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for v in 0..k {
                        let xx = (j * s + v) as isize - p as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let idx = base + y as usize * w + xx as usize;
                        let val = x[idx];
                        match best {
                            Some((b, _)) if !(val > b) => {}
                            _ => best = Some((val, idx)),
                        }
                    }
                }
                let (val, idx) = best.ok_or_else(|| {
                    Error::config(format!("maxpool window ({i},{j}) lies entirely in padding"))
                })?;
                let o = (ch * ho + i) * wo + j;
                out.data_mut()[o] = val;
                argmax[o] = idx;
            }
        }
    }
    Ok((
        out,
        MaxPoolIndices {
            input_shape: input.shape().to_vec(),
            output_shape: vec![c, ho, wo],
            argmax,
        },
    ))
}

/// Routes each upstream gradient to its recorded argmax, summing where
/// overlapping windows share a winner.
pub fn maxpool_backward<T: Real>(indices: &MaxPoolIndices, d_out: &Tensor<T>) -> Result<Tensor<T>> {
    if d_out.shape() != indices.output_shape.as_slice() {
        return Err(Error::config(format!(
            "maxpool_backward: upstream gradient {:?} does not match output {:?}",
            d_out.shape(),
            indices.output_shape
        )));
    }
    let mut d_in = Tensor::zeros(&indices.input_shape);
    let n = d_in.len();
    let di = d_in.data_mut();
    for (&idx, &g) in indices.argmax.iter().zip(d_out.data()) {
        assert!(idx < n, "maxpool argmax {idx} out of range for input of {n} values");
        di[idx] = di[idx] + g;
    }
    Ok(d_in)
}
