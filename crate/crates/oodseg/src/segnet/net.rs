//! Network construction, forward evaluation with feature capture, and
//! reverse-mode gradients of the Dice loss.
//!
//! The architecture is materialized once as a static node graph whose
//! execution order equals the registry order; the backward pass walks the
//! same graph in reverse over the recorded activations.

use crate::tensor::rng::Rng;
use crate::tensor::Tensor;

use super::loss::{dice_backward_from_probs, dice_forward, labels_from_mask};
use super::ops::*;
use super::scalar::Scalar;
use super::{FeatureStack, LayerEntry, LayerKind, NetConfig, NetError, Registry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum NodeOp {
    Input,
    /// 3x3x3 convolution; payload indexes into `NetParams::convs`.
    Conv(usize),
    /// 1x1x1 classification head.
    Head(usize),
    Norm,
    Act,
    Dropout,
    Down,
    Up,
    /// Concatenation of the previous node with an earlier skip node.
    Concat(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub id: String,
    pub op: NodeOp,
    pub input: usize,
    pub out_c: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Graph {
    pub nodes: Vec<Node>,
    /// (conv param index, node index of its post-activation map).
    pub capture: Vec<(usize, usize)>,
}

/// Shape descriptor of one parameterized convolution.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConvShape {
    pub id: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
}

impl ConvShape {
    pub fn kernel_len(&self) -> usize {
        self.out_ch * self.in_ch * self.ksize.pow(3)
    }
}

pub(crate) fn build_graph(cfg: &NetConfig) -> (Graph, Vec<ConvShape>, Registry) {
    let ch = cfg.effective_channels();
    let levels = cfg.levels;
    let mut nodes: Vec<Node> = vec![Node {
        id: "input".into(),
        op: NodeOp::Input,
        input: 0,
        out_c: 1,
    }];
    let mut convs: Vec<ConvShape> = Vec::new();
    let mut capture = Vec::new();

    let block = |nodes: &mut Vec<Node>,
                     convs: &mut Vec<ConvShape>,
                     capture: &mut Vec<(usize, usize)>,
                     name: &str,
                     prev: usize,
                     in_ch: usize,
                     out_ch: usize|
     -> usize {
        let conv_idx = convs.len();
        convs.push(ConvShape {
            id: format!("{name}.conv"),
            in_ch,
            out_ch,
            ksize: 3,
        });
        nodes.push(Node {
            id: format!("{name}.conv"),
            op: NodeOp::Conv(conv_idx),
            input: prev,
            out_c: out_ch,
        });
        let conv_node = nodes.len() - 1;
        nodes.push(Node {
            id: format!("{name}.norm"),
            op: NodeOp::Norm,
            input: conv_node,
            out_c: out_ch,
        });
        nodes.push(Node {
            id: format!("{name}.act"),
            op: NodeOp::Act,
            input: nodes.len() - 1,
            out_c: out_ch,
        });
        capture.push((conv_idx, nodes.len() - 1));
        nodes.push(Node {
            id: format!("{name}.drop"),
            op: NodeOp::Dropout,
            input: nodes.len() - 1,
            out_c: out_ch,
        });
        nodes.len() - 1
    };

    let mut prev = 0usize;
    let mut prev_c = 1usize;
    let mut skips: Vec<(usize, usize)> = Vec::new(); // (node, channels)
    for l in 0..levels.saturating_sub(1) {
        prev = block(
            &mut nodes,
            &mut convs,
            &mut capture,
            &format!("enc{l}"),
            prev,
            prev_c,
            ch[l],
        );
        prev_c = ch[l];
        skips.push((prev, prev_c));
        nodes.push(Node {
            id: format!("down{l}"),
            op: NodeOp::Down,
            input: prev,
            out_c: prev_c,
        });
        prev = nodes.len() - 1;
    }
    let deep = ch[levels - 1];
    prev = block(&mut nodes, &mut convs, &mut capture, "bot0", prev, prev_c, deep);
    prev_c = deep;
    prev = block(&mut nodes, &mut convs, &mut capture, "bot1", prev, prev_c, deep);
    let encoder_end = "bot1.conv".to_string();

    for l in (0..levels.saturating_sub(1)).rev() {
        nodes.push(Node {
            id: format!("up{l}"),
            op: NodeOp::Up,
            input: prev,
            out_c: prev_c,
        });
        prev = nodes.len() - 1;
        let mut in_ch = prev_c;
        if cfg.variant != super::Variant::NoSkip {
            let (skip_node, skip_c) = skips[l];
            nodes.push(Node {
                id: format!("concat{l}"),
                op: NodeOp::Concat(skip_node),
                input: prev,
                out_c: prev_c + skip_c,
            });
            prev = nodes.len() - 1;
            in_ch = prev_c + skip_c;
        }
        prev = block(
            &mut nodes,
            &mut convs,
            &mut capture,
            &format!("dec{l}"),
            prev,
            in_ch,
            ch[l],
        );
        prev_c = ch[l];
    }

    let head_idx = convs.len();
    convs.push(ConvShape {
        id: "head".into(),
        in_ch: prev_c,
        out_ch: cfg.classes,
        ksize: 1,
    });
    nodes.push(Node {
        id: "head".into(),
        op: NodeOp::Head(head_idx),
        input: prev,
        out_c: cfg.classes,
    });

    let penultimate = convs[head_idx - 1].id.clone();
    let entries: Vec<LayerEntry> = nodes[1..]
        .iter()
        .map(|n| LayerEntry {
            id: n.id.clone(),
            kind: match n.op {
                NodeOp::Conv(_) => LayerKind::Conv,
                NodeOp::Head(_) => LayerKind::Head,
                NodeOp::Norm => LayerKind::Norm,
                NodeOp::Act => LayerKind::Act,
                NodeOp::Dropout => LayerKind::Dropout,
                NodeOp::Down => LayerKind::Down,
                NodeOp::Up => LayerKind::Up,
                NodeOp::Concat(_) => LayerKind::Concat,
                NodeOp::Input => unreachable!(),
            },
            out_channels: n.out_c,
        })
        .collect();
    let registry = Registry {
        entries,
        encoder_end,
        penultimate,
    };
    (
        Graph { nodes, capture },
        convs,
        registry,
    )
}

/// One convolution's parameters.
#[derive(Debug, Clone)]
pub struct ConvParam<S> {
    pub shape: ConvShape,
    pub kernel: Vec<S>,
    pub bias: Vec<S>,
}

/// The trained state of the network: configuration, registry and the
/// ordered list of convolution parameters.
#[derive(Debug, Clone)]
pub struct NetParams<S: Scalar> {
    pub config: NetConfig,
    pub registry: Registry,
    pub(crate) graph: Graph,
    pub convs: Vec<ConvParam<S>>,
}

impl<S: Scalar> NetParams<S> {
    pub fn parameter_count(&self) -> usize {
        self.convs
            .iter()
            .map(|c| c.kernel.len() + c.bias.len())
            .collect::<Vec<_>>()
            .iter()
            .sum()
    }
}

/// He-style initialization: kernel entries ~ N(0, 2 / fan_in), zero
/// biases. Deterministic for a given generator state.
pub fn build_net<S: Scalar>(cfg: &NetConfig, rng: &mut Rng) -> Result<NetParams<S>, NetError> {
    cfg.validate()?;
    let (graph, shapes, registry) = build_graph(cfg);
    let mut convs = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let fan_in = shape.in_ch * shape.ksize.pow(3);
        let std = (2.0 / fan_in as f64).sqrt();
        let kernel: Vec<S> = (0..shape.kernel_len())
            .map(|_| S::from_f64(std * rng.normal()))
            .collect();
        let bias = vec![S::ZERO; shape.out_ch];
        convs.push(ConvParam {
            shape,
            kernel,
            bias,
        });
    }
    Ok(NetParams {
        config: cfg.clone(),
        registry,
        graph,
        convs,
    })
}

pub(crate) struct Activations<S> {
    pub outs: Vec<Fm<S>>,
    pub norm_saved: Vec<Vec<(f64, f64)>>,
    pub drop_masks: Vec<Vec<bool>>,
}

pub(crate) fn image_to_fm<S: Scalar>(image: &Tensor) -> Result<Fm<S>, NetError> {
    if image.rank() != 3 {
        return Err(NetError::ExtentMismatch {
            got: image.shape().to_vec(),
            levels: 0,
        });
    }
    let (h, w, d) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let data = (0..image.len())
        .map(|i| S::from_f64(image.value(i)))
        .collect();
    Ok(Fm { c: 1, h, w, d, data })
}

pub(crate) fn fm_to_tensor<S: Scalar>(fm: &Fm<S>, with_channels: bool) -> Tensor {
    let shape: Vec<usize> = if with_channels {
        vec![fm.c, fm.h, fm.w, fm.d]
    } else {
        vec![fm.h, fm.w, fm.d]
    };
    match S::DTYPE {
        crate::tensor::DType::F32 => Tensor::from_f32(
            &shape,
            fm.data.iter().map(|v| v.to_f64() as f32).collect(),
        )
        .unwrap(),
        crate::tensor::DType::F64 => {
            Tensor::from_f64(&shape, fm.data.iter().map(|v| v.to_f64()).collect()).unwrap()
        }
    }
}

pub(crate) fn run_forward<S: Scalar>(
    params: &NetParams<S>,
    input: Fm<S>,
    dropout_active: bool,
    rng: &mut Rng,
) -> Activations<S> {
    let n = params.graph.nodes.len();
    let mut outs: Vec<Fm<S>> = Vec::with_capacity(n);
    let mut norm_saved = vec![Vec::new(); n];
    let mut drop_masks = vec![Vec::new(); n];
    outs.push(input);
    for i in 1..n {
        let node = &params.graph.nodes[i];
        let x = &outs[node.input];
        let fm = match node.op {
            NodeOp::Input => unreachable!(),
            NodeOp::Conv(p) => {
                let cp = &params.convs[p];
                let mut out = Fm::zeros(cp.shape.out_ch, x.h, x.w, x.d);
                conv3_forward(x, &cp.kernel, &cp.bias, &mut out);
                out
            }
            NodeOp::Head(p) => {
                let cp = &params.convs[p];
                let mut out = Fm::zeros(cp.shape.out_ch, x.h, x.w, x.d);
                conv1_forward(x, &cp.kernel, &cp.bias, &mut out);
                out
            }
            NodeOp::Norm => {
                let mut out = Fm::zeros(x.c, x.h, x.w, x.d);
                norm_saved[i] = instance_norm_forward(x, params.config.norm_eps, &mut out);
                out
            }
            NodeOp::Act => {
                let mut out = Fm::zeros(x.c, x.h, x.w, x.d);
                relu_forward(x, &mut out);
                out
            }
            NodeOp::Dropout => {
                let mut out = Fm::zeros(x.c, x.h, x.w, x.d);
                if dropout_active && params.config.dropout_rate > 0.0 {
                    drop_masks[i] =
                        dropout3d_forward(x, params.config.dropout_rate, rng, &mut out);
                } else {
                    out.data.copy_from_slice(&x.data);
                }
                out
            }
            NodeOp::Down => {
                let mut out = Fm::zeros(x.c, x.h / 2, x.w / 2, x.d / 2);
                avgpool2_forward(x, &mut out);
                out
            }
            NodeOp::Up => {
                let mut out = Fm::zeros(x.c, x.h * 2, x.w * 2, x.d * 2);
                upsample2_forward(x, &mut out);
                out
            }
            NodeOp::Concat(skip) => {
                let b = &outs[skip];
                let mut out = Fm::zeros(x.c + b.c, x.h, x.w, x.d);
                concat_forward(x, b, &mut out);
                out
            }
        };
        outs.push(fm);
    }
    Activations {
        outs,
        norm_saved,
        drop_masks,
    }
}

/// Run the network. Returns softmax-ready logits (classes x H x W x D)
/// and, when `capture` is set, the post-activation map of every conv
/// layer keyed by its registry id.
pub fn forward<S: Scalar>(
    params: &NetParams<S>,
    image: &Tensor,
    capture: bool,
    dropout_active: bool,
    rng: &mut Rng,
) -> Result<(Tensor, FeatureStack), NetError> {
    params.config.check_extents(image.shape())?;
    let input = image_to_fm::<S>(image)?;
    let acts = run_forward(params, input, dropout_active, rng);
    let logits = fm_to_tensor(acts.outs.last().unwrap(), true);
    let stack = if capture {
        let entries = params
            .graph
            .capture
            .iter()
            .map(|&(conv_idx, act_node)| {
                (
                    params.convs[conv_idx].shape.id.clone(),
                    fm_to_tensor(&acts.outs[act_node], true),
                )
            })
            .collect();
        FeatureStack::new(entries)
    } else {
        FeatureStack::empty()
    };
    Ok((logits, stack))
}

#[derive(Debug, Clone)]
pub struct HeadGrads<S> {
    pub kernel: Vec<S>,
    pub bias: Vec<S>,
}

/// Gradients of the Dice loss for every parameter tensor and the input.
#[derive(Debug)]
pub struct Gradients<S> {
    pub convs: Vec<HeadGrads<S>>,
    pub input: Tensor,
}

#[derive(Debug)]
pub struct BackwardResult<S> {
    pub grads: Gradients<S>,
    pub loss: f64,
}

fn add_into<S: Scalar>(slot: &mut Option<Fm<S>>, fm: Fm<S>) {
    match slot {
        None => *slot = Some(fm),
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&fm.data) {
                *a += *b;
            }
        }
    }
}

/// Reverse-mode gradients of `dice_loss(forward(image), target)`.
///
/// The forward pass is recorded here (including dropout masks when
/// active) and reused, so the returned gradients are exact for that
/// single stochastic evaluation.
pub fn backward<S: Scalar>(
    params: &NetParams<S>,
    image: &Tensor,
    target: &Tensor,
    dropout_active: bool,
    rng: &mut Rng,
) -> Result<BackwardResult<S>, NetError> {
    params.config.check_extents(image.shape())?;
    if target.shape() != image.shape() {
        return Err(NetError::ShapeMismatch {
            mask: target.shape().to_vec(),
            logits: image.shape().to_vec(),
        });
    }
    let labels = labels_from_mask(target, params.config.classes)?;
    let input = image_to_fm::<S>(image)?;
    let acts = run_forward(params, input, dropout_active, rng);

    let logits = acts.outs.last().unwrap();
    let (loss, probs) = dice_forward(logits, &labels, params.config.classes);
    let dlogits = dice_backward_from_probs(&probs, &labels, params.config.classes);

    let n = params.graph.nodes.len();
    let mut grads: Vec<Option<Fm<S>>> = (0..n).map(|_| None).collect();
    grads[n - 1] = Some(dlogits);
    let mut conv_grads: Vec<HeadGrads<S>> = params
        .convs
        .iter()
        .map(|c| HeadGrads {
            kernel: vec![S::ZERO; c.kernel.len()],
            bias: vec![S::ZERO; c.bias.len()],
        })
        .collect();

    for i in (1..n).rev() {
        let Some(g) = grads[i].take() else { continue };
        let node = &params.graph.nodes[i];
        let x = &acts.outs[node.input];
        match node.op {
            NodeOp::Input => unreachable!(),
            NodeOp::Conv(p) => {
                let cp = &params.convs[p];
                let cg = &mut conv_grads[p];
                conv3_backward_weights(x, &g, &mut cg.kernel, &mut cg.bias);
                let mut dx = Fm::zeros(x.c, x.h, x.w, x.d);
                conv3_backward_input(&g, &cp.kernel, x.c, &mut dx);
                add_into(&mut grads[node.input], dx);
            }
            NodeOp::Head(p) => {
                let cp = &params.convs[p];
                let cg = &mut conv_grads[p];
                conv1_backward_weights(x, &g, &mut cg.kernel, &mut cg.bias);
                let mut dx = Fm::zeros(x.c, x.h, x.w, x.d);
                conv1_backward_input(&g, &cp.kernel, x.c, &mut dx);
                add_into(&mut grads[node.input], dx);
            }
            NodeOp::Norm => {
                let mut dx = Fm::zeros(x.c, x.h, x.w, x.d);
                instance_norm_backward(&g, &acts.outs[i], &acts.norm_saved[i], &mut dx);
                add_into(&mut grads[node.input], dx);
            }
            NodeOp::Act => {
                let mut dx = Fm::zeros(x.c, x.h, x.w, x.d);
                relu_backward(&g, &acts.outs[i], &mut dx);
                add_into(&mut grads[node.input], dx);
            }
            NodeOp::Dropout => {
                let mut dx = Fm::zeros(x.c, x.h, x.w, x.d);
                if dropout_active && params.config.dropout_rate > 0.0 {
                    dropout3d_backward(&g, &acts.drop_masks[i], params.config.dropout_rate, &mut dx);
                } else {
                    dx.data.copy_from_slice(&g.data);
                }
                add_into(&mut grads[node.input], dx);
            }
            NodeOp::Down => {
                let mut dx = Fm::zeros(x.c, x.h, x.w, x.d);
                avgpool2_backward(&g, &mut dx);
                add_into(&mut grads[node.input], dx);
            }
            NodeOp::Up => {
                let mut dx = Fm::zeros(x.c, x.h, x.w, x.d);
                upsample2_backward(&g, &mut dx);
                add_into(&mut grads[node.input], dx);
            }
            NodeOp::Concat(skip) => {
                let b = &acts.outs[skip];
                let mut da = Fm::zeros(x.c, x.h, x.w, x.d);
                let mut db = Fm::zeros(b.c, b.h, b.w, b.d);
                concat_backward(&g, &mut da, &mut db);
                add_into(&mut grads[node.input], da);
                add_into(&mut grads[skip], db);
            }
        }
    }
    let input_grad = grads[0].take().expect("input gradient always reached");
    Ok(BackwardResult {
        grads: Gradients {
            convs: conv_grads,
            input: fm_to_tensor(&input_grad, false),
        },
        loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn small_cfg() -> NetConfig {
        NetConfig {
            channels: vec![4, 8],
            levels: 2,
            ..NetConfig::default()
        }
    }

    #[test]
    fn default_registry_has_six_convs_and_named_targets() {
        let cfg = NetConfig::default();
        let params = build_net::<f32>(&cfg, &mut Rng::new(1)).unwrap();
        let convs = params.registry.conv_ids();
        assert!(convs.len() >= 6, "{convs:?}");
        assert_eq!(params.registry.encoder_end, "bot1.conv");
        assert_eq!(params.registry.penultimate, "dec0.conv");
        assert!(convs.contains(&"bot1.conv"));
        assert!(convs.contains(&"dec0.conv"));
        assert_ne!(params.registry.encoder_end, params.registry.penultimate);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let cfg = NetConfig::default();
        let a = build_net::<f32>(&cfg, &mut Rng::new(5)).unwrap();
        let b = build_net::<f32>(&cfg, &mut Rng::new(5)).unwrap();
        for (ca, cb) in a.convs.iter().zip(&b.convs) {
            assert_eq!(ca.kernel, cb.kernel);
            assert_eq!(ca.bias, cb.bias);
        }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = NetConfig::default();
        let params = build_net::<f32>(&cfg, &mut Rng::new(2)).unwrap();
        // enc0 1->8, enc1 8->16, bot0 16->32, bot1 32->32,
        // dec1 (32+16)->16, dec0 (16+8)->8, head 8->2
        let expect = (8 * 27 + 8)
            + (16 * 8 * 27 + 16)
            + (32 * 16 * 27 + 32)
            + (32 * 32 * 27 + 32)
            + (16 * 48 * 27 + 16)
            + (8 * 24 * 27 + 8)
            + (2 * 8 + 2);
        assert_eq!(params.parameter_count(), expect);
    }

    #[test]
    fn forward_is_deterministic_without_dropout() {
        let cfg = small_cfg();
        let params = build_net::<f32>(&cfg, &mut Rng::new(3)).unwrap();
        let mut img = Tensor::zeros(&[8, 8, 8], DType::F32);
        for i in 0..img.len() {
            img.set_value(i, (i % 17) as f64 * 0.05);
        }
        let (a, _) = forward(&params, &img, false, false, &mut Rng::new(1)).unwrap();
        let (b, _) = forward(&params, &img, false, false, &mut Rng::new(999)).unwrap();
        assert_eq!(a.as_f32().unwrap(), b.as_f32().unwrap());
    }

    #[test]
    fn capture_keys_equal_conv_ids() {
        let cfg = NetConfig::default();
        let params = build_net::<f32>(&cfg, &mut Rng::new(3)).unwrap();
        let img = Tensor::zeros(&[16, 16, 16], DType::F32);
        let (_, stack) = forward(&params, &img, true, false, &mut Rng::new(1)).unwrap();
        assert_eq!(stack.ids(), params.registry.conv_ids());
        // channel counts match the registry
        for (id, feat) in stack.iter() {
            assert_eq!(
                feat.shape()[0],
                params.registry.conv_channels(id).unwrap()
            );
        }
    }

    #[test]
    fn feature_extents_halve_per_level() {
        let cfg = NetConfig::default();
        let params = build_net::<f32>(&cfg, &mut Rng::new(3)).unwrap();
        let img = Tensor::zeros(&[32, 32, 32], DType::F32);
        let (logits, stack) = forward(&params, &img, true, false, &mut Rng::new(1)).unwrap();
        assert_eq!(logits.shape(), &[2, 32, 32, 32]);
        assert_eq!(stack.get("enc0.conv").unwrap().shape(), &[8, 32, 32, 32]);
        assert_eq!(stack.get("enc1.conv").unwrap().shape(), &[16, 16, 16, 16]);
        assert_eq!(stack.get("bot1.conv").unwrap().shape(), &[32, 8, 8, 8]);
        assert_eq!(stack.get("dec0.conv").unwrap().shape(), &[8, 32, 32, 32]);
    }

    #[test]
    fn zero_input_zero_bias_gives_uniform_logits() {
        let cfg = small_cfg();
        let params = build_net::<f32>(&cfg, &mut Rng::new(7)).unwrap();
        let img = Tensor::zeros(&[8, 8, 8], DType::F32);
        let (logits, _) = forward(&params, &img, false, false, &mut Rng::new(1)).unwrap();
        let sp = 512;
        let vals = logits.as_f32().unwrap();
        for v in 0..sp {
            assert!((vals[v] - vals[sp + v]).abs() < 1e-6);
        }
    }

    #[test]
    fn extent_mismatch_is_rejected() {
        let cfg = NetConfig::default();
        let params = build_net::<f32>(&cfg, &mut Rng::new(3)).unwrap();
        let img = Tensor::zeros(&[10, 16, 16], DType::F32);
        assert!(matches!(
            forward(&params, &img, false, false, &mut Rng::new(1)),
            Err(NetError::ExtentMismatch { .. })
        ));
    }

    #[test]
    fn noskip_variant_has_no_concat_layers() {
        let cfg = NetConfig {
            variant: super::super::Variant::NoSkip,
            ..NetConfig::default()
        };
        let params = build_net::<f32>(&cfg, &mut Rng::new(3)).unwrap();
        assert!(params
            .registry
            .entries
            .iter()
            .all(|e| e.kind != LayerKind::Concat));
        let img = Tensor::zeros(&[16, 16, 16], DType::F32);
        forward(&params, &img, false, false, &mut Rng::new(1)).unwrap();
    }

    #[test]
    fn zero_kernel_net_has_zero_input_gradient() {
        let cfg = small_cfg();
        let mut params = build_net::<f64>(&cfg, &mut Rng::new(3)).unwrap();
        for c in &mut params.convs {
            for k in &mut c.kernel {
                *k = 0.0;
            }
        }
        let mut img = Tensor::zeros(&[8, 8, 8], DType::F64);
        for i in 0..img.len() {
            img.set_value(i, (i % 5) as f64 * 0.1);
        }
        let target = Tensor::zeros(&[8, 8, 8], DType::F32);
        let res = backward(&params, &img, &target, false, &mut Rng::new(1)).unwrap();
        assert!(res.grads.input.iter_f64().all(|g| g == 0.0));
    }

    #[test]
    fn backward_is_deterministic_without_dropout() {
        let cfg = small_cfg();
        let params = build_net::<f32>(&cfg, &mut Rng::new(3)).unwrap();
        let mut img = Tensor::zeros(&[8, 8, 8], DType::F32);
        for i in 0..img.len() {
            img.set_value(i, ((i * 31 + 7) % 23) as f64 * 0.04);
        }
        let mut target = Tensor::zeros(&[8, 8, 8], DType::F32);
        target.set_value(100, 1.0);
        target.set_value(101, 1.0);
        let a = backward(&params, &img, &target, false, &mut Rng::new(1)).unwrap();
        let b = backward(&params, &img, &target, false, &mut Rng::new(2)).unwrap();
        assert_eq!(a.loss, b.loss);
        for (ga, gb) in a.grads.convs.iter().zip(&b.grads.convs) {
            assert_eq!(ga.kernel, gb.kernel);
            assert_eq!(ga.bias, gb.bias);
        }
    }
}

#[cfg(test)]
mod gradcheck {
    use super::*;
    use crate::tensor::DType;

    /// Central finite differences on an f64 two-level net.
    #[test]
    fn gradients_match_finite_differences() {
        let cfg = NetConfig {
            channels: vec![4, 8],
            levels: 2,
            dropout_rate: 0.0,
            ..NetConfig::default()
        };
        let seed: u64 = 2024;
        let mut rng = Rng::new(seed);
        let params = build_net::<f64>(&cfg, &mut rng).unwrap();
        // phantom-like structured input: bright sphere on a dim ellipse
        let mut img = Tensor::zeros(&[8, 8, 8], DType::F64);
        let mut target = Tensor::zeros(&[8, 8, 8], DType::F32);
        for h in 0..8usize {
            for w in 0..8usize {
                for d in 0..8usize {
                    let r2 = (h as f64 - 3.5).powi(2) + (w as f64 - 3.5).powi(2) + (d as f64 - 3.5).powi(2);
                    let idx = (h * 8 + w) * 8 + d;
                    let base = if r2 <= 4.0 { 0.9 } else if r2 <= 11.0 { 0.6 } else { 0.05 };
                    img.set_value(idx, base + 0.05 * rng.normal());
                    if r2 <= 4.0 { target.set_value(idx, 1.0); }
                }
            }
        }
        let res = backward(&params, &img, &target, false, &mut Rng::new(1)).unwrap();
        let grad_scale = res
            .grads
            .convs
            .iter()
            .flat_map(|c| c.kernel.iter().chain(&c.bias))
            .fold(0.0f64, |a, &g| a.max(g.abs()));
        // Central differences in f64: h near eps^(1/3) keeps both the
        // truncation and roundoff terms far below the tolerance. Larger
        // steps trip over ReLU kinks and invalidate the oracle.
        let h_step: f64 = 1e-5;
        let mut worst = 0.0f64;
        let n_convs = params.convs.len();
        let mut check_rng = Rng::new(7);
        for trial in 0..40 {
            let ci = check_rng.below(n_convs);
            let on_bias = check_rng.below(8) == 0;
            let (len, analytic) = if on_bias {
                (params.convs[ci].bias.len(), &res.grads.convs[ci].bias)
            } else {
                (params.convs[ci].kernel.len(), &res.grads.convs[ci].kernel)
            };
            let k = check_rng.below(len);
            let a = analytic[k];
            let mut probe = |delta: f64| -> f64 {
                let mut p2 = params.clone();
                if on_bias {
                    p2.convs[ci].bias[k] += delta;
                } else {
                    p2.convs[ci].kernel[k] += delta;
                }
                backward(&p2, &img, &target, false, &mut Rng::new(1))
                    .unwrap()
                    .loss
            };
            let fd = (probe(h_step) - probe(-h_step)) / (2.0 * h_step);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6 * grad_scale);
            if rel > worst {
                worst = rel;
            }
            let _ = trial;
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }
}
