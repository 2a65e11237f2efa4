use crate::error::{Error, Result};

use super::network::{Conv2d, Layer, Linear, NetworkDef};
use super::ops::{col2im, gemm, im2col, maxpool_backward, maxpool_forward};
use super::tensor::Tensor4;

/// State kept by a layer's forward pass for its backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache {
    /// Layer input (conv, fc).
    Input(Tensor4),
    /// Layer output (ReLU; the gradient mask is `output > 0`).
    Output(Tensor4),
    Pool {
        argmax: Vec<u32>,
        input_dims: [usize; 4],
    },
    Flatten {
        input_dims: [usize; 4],
    },
}

/// Gradients of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-layer parameter gradients, aligned with `NetworkDef::layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

/// Activation of one conv layer's capture point for a batch.
#[derive(Debug, Clone)]
pub struct Captured {
    pub conv_id: usize,
    pub activations: Tensor4,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Row-major `batch x classes`.
    pub logits: Vec<f64>,
    pub classes: usize,
    pub captured: Vec<Captured>,
}

/// What to do at each conv layer's capture point during a forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardOptions<'a> {
    /// Conv layer ids whose capture-point output is returned.
    pub capture: &'a [usize],
    /// Per conv layer id, channels to keep; dropped channels are forced to
    /// zero. Missing or `None` entries keep everything.
    pub keep: &'a [Option<Vec<bool>>],
}

/// Forward pass kept for a subsequent [`backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    pub output: ForwardOutput,
    caches: Vec<LayerCache>,
}

pub fn layer_forward(
    layer: &Layer,
    input: Tensor4,
    keep_cache: bool,
) -> Result<(Tensor4, Option<LayerCache>)> {
    let [n, c, h, w] = input.dims();
    match layer {
        Layer::Conv(conv) => {
            if c != conv.in_channels {
                return Err(Error::invalid(format!(
                    "conv expects {} channels, input has {c}",
                    conv.in_channels
                )));
            }
            let out = conv_forward(conv, &input)?;
            Ok((out, keep_cache.then_some(LayerCache::Input(input))))
        }
        Layer::Relu => {
            let mut out = input;
            out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
            let cache = keep_cache.then(|| LayerCache::Output(out.clone()));
            Ok((out, cache))
        }
        Layer::MaxPool { size, stride } => {
            if h < *size || w < *size {
                return Err(Error::invalid("pooling window does not fit input"));
            }
            let oh = (h - size) / stride + 1;
            let ow = (w - size) / stride + 1;
            let per_in = c * h * w;
            let per_out = c * oh * ow;
            let mut out = vec![0.0; n * per_out];
            let mut argmax = vec![0u32; n * per_out];
            for i in 0..n {
                maxpool_forward(
                    input.sample(i),
                    c,
                    h,
                    w,
                    *size,
                    *stride,
                    &mut out[i * per_out..(i + 1) * per_out],
                    &mut argmax[i * per_out..(i + 1) * per_out],
                );
                for a in &mut argmax[i * per_out..(i + 1) * per_out] {
                    *a += (i * per_in) as u32;
                }
            }
            let cache = keep_cache.then_some(LayerCache::Pool {
                argmax,
                input_dims: input.dims(),
            });
            Ok((Tensor4::from_raw(n, c, oh, ow, out), cache))
        }
        Layer::Flatten => {
            let dims = input.dims();
            let out = input.reshape(c * h * w, 1, 1)?;
            Ok((
                out,
                keep_cache.then_some(LayerCache::Flatten { input_dims: dims }),
            ))
        }
        Layer::Linear(lin) => {
            let features = c * h * w;
            if features != lin.in_features {
                return Err(Error::invalid(format!(
                    "fc expects {} inputs, got {features}",
                    lin.in_features
                )));
            }
            let mut out = vec![0.0; n * lin.out_features];
            for row in out.chunks_mut(lin.out_features) {
                row.copy_from_slice(&lin.bias);
            }
            gemm(
                n,
                lin.in_features,
                lin.out_features,
                1.0,
                input.data(),
                false,
                &lin.weight,
                true,
                1.0,
                &mut out,
            );
            let out = Tensor4::from_raw(n, lin.out_features, 1, 1, out);
            Ok((out, keep_cache.then_some(LayerCache::Input(input))))
        }
    }
}

fn conv_forward(conv: &Conv2d, input: &Tensor4) -> Result<Tensor4> {
    let [n, c, h, w] = input.dims();
    let (oh, ow) = conv
        .output_hw(h, w)
        .ok_or_else(|| Error::invalid("conv kernel does not fit input"))?;
    let p = oh * ow;
    let kk = conv.filter_len();
    let per_out = conv.out_channels * p;
    let mut out = vec![0.0; n * per_out];
    let mut cols = vec![0.0; kk * p];
    for i in 0..n {
        im2col(
            input.sample(i),
            c,
            h,
            w,
            conv.kernel,
            conv.stride,
            &mut cols,
        );
        let o = &mut out[i * per_out..(i + 1) * per_out];
        for (f, plane) in o.chunks_mut(p).enumerate() {
            plane.fill(conv.bias[f]);
        }
        gemm(
            conv.out_channels,
            kk,
            p,
            1.0,
            &conv.weight,
            false,
            &cols,
            false,
            1.0,
            o,
        );
    }
    Ok(Tensor4::from_raw(n, conv.out_channels, oh, ow, out))
}

/// Gradient with respect to the layer input, and parameter gradients for
/// conv and fc layers.
pub fn layer_backward(
    layer: &Layer,
    cache: &LayerCache,
    grad_out: &Tensor4,
) -> Result<(Tensor4, Option<ParamGrad>)> {
    match (layer, cache) {
        (Layer::Conv(conv), LayerCache::Input(input)) => Ok(conv_backward(conv, input, grad_out)),
        (Layer::Relu, LayerCache::Output(out)) => {
            let [n, c, h, w] = out.dims();
            let g = grad_out
                .data()
                .iter()
                .zip(out.data())
                .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
                .collect();
            Ok((Tensor4::from_raw(n, c, h, w, g), None))
        }
        (Layer::MaxPool { .. }, LayerCache::Pool { argmax, input_dims }) => {
            let [n, c, h, w] = *input_dims;
            let mut g = vec![0.0; n * c * h * w];
            maxpool_backward(grad_out.data(), argmax, &mut g);
            Ok((Tensor4::from_raw(n, c, h, w, g), None))
        }
        (Layer::Flatten, LayerCache::Flatten { input_dims }) => {
            let [_, c, h, w] = *input_dims;
            Ok((grad_out.clone().reshape(c, h, w)?, None))
        }
        (Layer::Linear(lin), LayerCache::Input(input)) => Ok(linear_backward(lin, input, grad_out)),
        _ => Err(Error::state(format!(
            "cache does not belong to a {} layer",
            layer.kind_name()
        ))),
    }
}

fn conv_backward(
    conv: &Conv2d,
    input: &Tensor4,
    grad_out: &Tensor4,
) -> (Tensor4, Option<ParamGrad>) {
    let [n, c, h, w] = input.dims();
    let [_, f, oh, ow] = grad_out.dims();
    let p = oh * ow;
    let kk = conv.filter_len();
    let mut dw = vec![0.0; conv.weight.len()];
    let mut db = vec![0.0; f];
    let mut dx = vec![0.0; n * c * h * w];
    let mut cols = vec![0.0; kk * p];
    let mut dcols = vec![0.0; kk * p];
    for i in 0..n {
        let gy = grad_out.sample(i);
        for (b, plane) in db.iter_mut().zip(gy.chunks(p)) {
            *b += plane.iter().sum::<f64>();
        }
        im2col(
            input.sample(i),
            c,
            h,
            w,
            conv.kernel,
            conv.stride,
            &mut cols,
        );
        gemm(f, p, kk, 1.0, gy, false, &cols, true, 1.0, &mut dw);
        gemm(
            kk,
            f,
            p,
            1.0,
            &conv.weight,
            true,
            gy,
            false,
            0.0,
            &mut dcols,
        );
        col2im(
            &dcols,
            c,
            h,
            w,
            conv.kernel,
            conv.stride,
            &mut dx[i * c * h * w..(i + 1) * c * h * w],
        );
    }
    (
        Tensor4::from_raw(n, c, h, w, dx),
        Some(ParamGrad {
            weight: dw,
            bias: db,
        }),
    )
}

fn linear_backward(
    lin: &Linear,
    input: &Tensor4,
    grad_out: &Tensor4,
) -> (Tensor4, Option<ParamGrad>) {
    let [n, c, h, w] = input.dims();
    let (fin, fout) = (lin.in_features, lin.out_features);
    let gy = grad_out.data();
    let mut dw = vec![0.0; fin * fout];
    gemm(
        fout,
        n,
        fin,
        1.0,
        gy,
        true,
        input.data(),
        false,
        0.0,
        &mut dw,
    );
    let mut db = vec![0.0; fout];
    for row in gy.chunks(fout) {
        for (b, g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    let mut dx = vec![0.0; n * fin];
    gemm(
        n,
        fout,
        fin,
        1.0,
        gy,
        false,
        &lin.weight,
        false,
        0.0,
        &mut dx,
    );
    (
        Tensor4::from_raw(n, c, h, w, dx),
        Some(ParamGrad {
            weight: dw,
            bias: db,
        }),
    )
}

fn check_input(net: &NetworkDef, batch: &Tensor4) -> Result<()> {
    let [_, c, h, w] = batch.dims();
    if (c, h, w) != (net.input.channels, net.input.height, net.input.width) {
        return Err(Error::invalid(format!(
            "batch samples are ({c}, {h}, {w}), network expects ({}, {}, {})",
            net.input.channels, net.input.height, net.input.width
        )));
    }
    Ok(())
}

fn run(
    net: &NetworkDef,
    batch: Tensor4,
    opts: &ForwardOptions<'_>,
    keep_cache: bool,
) -> Result<Trace> {
    check_input(net, &batch)?;
    let conv_positions = net.conv_positions();
    let capture_at: Vec<Option<usize>> = (0..net.layers.len())
        .map(|pos| (0..conv_positions.len()).find(|&id| net.capture_position(id) == Some(pos)))
        .collect();
    let mut captured = Vec::new();
    let mut caches = Vec::with_capacity(if keep_cache { net.layers.len() } else { 0 });
    let mut x = batch;
    for (pos, layer) in net.layers.iter().enumerate() {
        let (mut y, cache) = layer_forward(layer, x, keep_cache)?;
        if let Some(conv_id) = capture_at[pos] {
            if let Some(Some(keep)) = opts.keep.get(conv_id) {
                if keep.len() != y.channels() {
                    return Err(Error::invalid(format!(
                        "mask for conv {conv_id} has {} entries, layer has {} channels",
                        keep.len(),
                        y.channels()
                    )));
                }
                let hw = y.height() * y.width();
                let ch = y.channels();
                for (idx, plane) in y.data_mut().chunks_mut(hw).enumerate() {
                    if !keep[idx % ch] {
                        plane.fill(0.0);
                    }
                }
            }
            if opts.capture.contains(&conv_id) {
                captured.push(Captured {
                    conv_id,
                    activations: y.clone(),
                });
            }
        }
        if let Some(cache) = cache {
            caches.push(cache);
        }
        x = y;
    }
    let classes = x.sample_len();
    Ok(Trace {
        output: ForwardOutput {
            logits: x.into_data(),
            classes,
            captured,
        },
        caches,
    })
}

/// Inference forward pass.
pub fn forward(
    net: &NetworkDef,
    batch: &Tensor4,
    opts: &ForwardOptions<'_>,
) -> Result<ForwardOutput> {
    Ok(run(net, batch.clone(), opts, false)?.output)
}

/// Forward pass that keeps what [`backward`] needs.
pub fn forward_train(net: &NetworkDef, batch: Tensor4, capture: &[usize]) -> Result<Trace> {
    run(net, batch, &ForwardOptions { capture, keep: &[] }, true)
}

/// Backpropagates `grad_logits` through a traced pass. Returns parameter
/// gradients and the gradient with respect to the network input.
pub fn backward(
    net: &NetworkDef,
    trace: &Trace,
    grad_logits: &[f64],
) -> Result<(Gradients, Tensor4)> {
    if trace.caches.len() != net.layers.len() {
        return Err(Error::state("trace was not recorded for this network"));
    }
    let n = grad_logits.len() / trace.output.classes.max(1);
    if n * trace.output.classes != grad_logits.len()
        || grad_logits.len() != trace.output.logits.len()
    {
        return Err(Error::invalid(
            "logit gradient does not match the traced batch",
        ));
    }
    let mut grads = vec![None; net.layers.len()];
    let mut g = Tensor4::from_raw(n, trace.output.classes, 1, 1, grad_logits.to_vec());
    for (pos, layer) in net.layers.iter().enumerate().rev() {
        let (gi, pg) = layer_backward(layer, &trace.caches[pos], &g)?;
        grads[pos] = pg;
        g = gi;
    }
    Ok((Gradients { layers: grads }, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::network::{build_lenet5, Shape};

    #[test]
    fn zero_network_gives_zero_logits() {
        let net = build_lenet5();
        let x = Tensor4::from_raw(
            2,
            1,
            28,
            28,
            (0..2 * 784).map(|i| (i % 13) as f64).collect(),
        );
        let out = forward(&net, &x, &ForwardOptions::default()).unwrap();
        assert_eq!(out.classes, 10);
        assert_eq!(out.logits, vec![0.0; 20]);
    }

    #[test]
    fn identity_pointwise_conv_reproduces_input() {
        let mut conv = Conv2d::zeros(3, 3, 1);
        for c in 0..3 {
            conv.weight[c * 3 + c] = 1.0;
        }
        let net = NetworkDef::new(Shape::new(3, 4, 4), vec![Layer::Conv(conv)]).unwrap();
        let x = Tensor4::from_raw(2, 3, 4, 4, (0..96).map(|i| i as f64 - 40.0).collect());
        let out = forward(
            &net,
            &x,
            &ForwardOptions {
                capture: &[0],
                keep: &[],
            },
        )
        .unwrap();
        assert_eq!(out.logits, x.data());
        assert_eq!(out.captured[0].activations.channel(1, 2), x.channel(1, 2));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let net = build_lenet5();
        let x = Tensor4::zeros(1, 1, 27, 28);
        assert!(forward(&net, &x, &ForwardOptions::default()).is_err());
    }

    #[test]
    fn captured_channels_are_post_relu_layer_output() {
        let mut net = build_lenet5();
        net.init_kaiming(3);
        let x = Tensor4::from_raw(
            3,
            1,
            28,
            28,
            (0..3 * 784)
                .map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.4)
                .collect(),
        );
        let out = forward(
            &net,
            &x,
            &ForwardOptions {
                capture: &[0, 1],
                keep: &[],
            },
        )
        .unwrap();
        assert_eq!(out.captured.len(), 2);
        let a0 = &out.captured[0].activations;
        assert_eq!(a0.dims(), [3, 20, 24, 24]);
        assert!(a0.data().iter().all(|&v| v >= 0.0));
        let (manual, _) = layer_forward(&net.layers[0], x.clone(), false).unwrap();
        let (manual, _) = layer_forward(&net.layers[1], manual, false).unwrap();
        assert_eq!(manual.channel(2, 5), a0.channel(2, 5));
        assert_eq!(out.captured[1].activations.dims(), [3, 50, 8, 8]);
    }
}
