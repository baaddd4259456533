use std::collections::BTreeMap;

use super::{ComputeGraph, FrontendError, OpKind, OpNode};
use crate::nda::DimsSpec;

/// Sliding-window output extent, `None` when the window does not fit.
pub fn conv_out_size(input: usize, ksz: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < ksz || stride == 0 {
        None
    } else {
        Some((padded - ksz) / stride + 1)
    }
}

fn window_out(node: &OpNode, input: &DimsSpec, ksz: usize, stride: usize, pad: usize, chans: usize) -> Result<DimsSpec, FrontendError> {
    let size = |n: &str| input.size_of(n).ok_or_else(|| FrontendError::BadLayer {
        layer: node.name.clone(),
        msg: format!("input lacks dimension `{n}`"),
    });
    let mut out = Vec::with_capacity(2);
    for axis in ["y", "x"] {
        let o = conv_out_size(size(axis)?, ksz, stride, pad)
            .ok_or_else(|| FrontendError::NonPositiveOutputDim { node: node.name.clone(), axis: axis.into() })?;
        out.push(o);
    }
    Ok(DimsSpec::new(&["img", "chan", "y", "x"], &[size("img")?, chans, out[0], out[1]]).expect("valid dims"))
}

/// Annotates every edge with its dims, binding `input_dims` to each source.
pub fn infer_shapes(g: &ComputeGraph, input_dims: &DimsSpec) -> Result<ComputeGraph, FrontendError> {
    let mut out = g.clone();
    let mut known: BTreeMap<String, DimsSpec> = BTreeMap::new();
    let mut pending: Vec<&OpNode> = g.nodes.iter().collect();
    while !pending.is_empty() {
        let before = pending.len();
        let mut rest = Vec::new();
        for node in pending {
            if node.kind != OpKind::Input && !known.contains_key(&node.inputs[0]) {
                rest.push(node);
                continue;
            }
            match &node.kind {
                OpKind::Input => {
                    known.insert(node.outputs[0].clone(), input_dims.clone());
                }
                OpKind::Convolution(p) => {
                    let input = known[&node.inputs[0]].clone();
                    let in_chan = input.size_of("chan").ok_or_else(|| FrontendError::BadLayer {
                        layer: node.name.clone(),
                        msg: "input lacks `chan`".into(),
                    })?;
                    let o = window_out(node, &input, p.ksz, p.stride, p.pad, p.out_chans)?;
                    let filts = DimsSpec::new(&["out_chan", "in_chan", "y", "x"], &[p.out_chans, in_chan, p.ksz, p.ksz])
                        .expect("valid dims");
                    let bias = DimsSpec::new(&["out_chan"], &[p.out_chans]).expect("valid dims");
                    known.insert(node.inputs[1].clone(), filts);
                    known.insert(node.inputs[2].clone(), bias);
                    known.insert(node.outputs[0].clone(), o);
                }
                OpKind::Pooling(p) => {
                    let input = known[&node.inputs[0]].clone();
                    let chans = input.size_of("chan").unwrap_or(1);
                    let o = window_out(node, &input, p.ksz, p.stride, p.pad, chans)?;
                    known.insert(node.outputs[0].clone(), o);
                }
                OpKind::Activation(_) => {
                    let d = known[&node.inputs[0]].densified();
                    known.insert(node.outputs[0].clone(), d);
                }
                OpKind::Conversion { target } => {
                    known.insert(node.outputs[0].clone(), target.clone());
                }
            }
        }
        if rest.len() == before {
            let n = rest[0];
            return Err(if n.inputs.iter().any(|i| g.producer(i).is_none() && !g.params.contains(i)) {
                FrontendError::UnboundSource(n.inputs[0].clone())
            } else {
                FrontendError::Cycle(n.name.clone())
            });
        }
        pending = rest;
    }
    out.edges = known;
    Ok(out)
}

/// Multiply-adds of a convolution counted as two FLOPs each; bias and
/// activation are not counted.
pub fn flops_of(node: &OpNode, edges: &BTreeMap<String, DimsSpec>) -> Result<u64, FrontendError> {
    let p = node.conv_params().ok_or_else(|| FrontendError::UnsupportedKind(node.name.clone()))?;
    let dims = |e: &String| edges.get(e).ok_or_else(|| FrontendError::MissingShape(e.clone()));
    let input = dims(&node.inputs[0])?;
    let output = dims(&node.outputs[0])?;
    let get = |d: &DimsSpec, n: &str| d.size_of(n).unwrap_or(1) as u64;
    let ksz = p.ksz as u64;
    Ok(2 * ksz * ksz * get(input, "chan") * get(output, "chan") * get(output, "y") * get(output, "x") * get(output, "img"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::ConvParams;

    #[test]
    fn output_sizes() {
        assert_eq!(conv_out_size(227, 11, 4, 0), Some(55));
        assert_eq!(conv_out_size(224, 7, 2, 3), Some(112));
        assert_eq!(conv_out_size(6, 6, 1, 0), Some(1));
        assert_eq!(conv_out_size(4, 6, 1, 0), None);
    }

    fn conv_node(p: ConvParams) -> OpNode {
        OpNode {
            name: "c".into(),
            kind: OpKind::Convolution(p),
            inputs: vec!["in".into(), "f".into(), "b".into()],
            outputs: vec!["out".into()],
            fused_activation: None,
        }
    }

    fn edges(input: [usize; 4], output: [usize; 4]) -> BTreeMap<String, DimsSpec> {
        let names = ["img", "chan", "y", "x"];
        BTreeMap::from([
            ("in".to_string(), DimsSpec::new(&names, &input).unwrap()),
            ("out".to_string(), DimsSpec::new(&names, &output).unwrap()),
        ])
    }

    #[test]
    fn flops_examples() {
        let n = conv_node(ConvParams { ksz: 5, stride: 1, pad: 2, out_chans: 32 });
        assert_eq!(flops_of(&n, &edges([5, 16, 28, 28], [5, 32, 28, 28])).unwrap(), 100_352_000);
        let n = conv_node(ConvParams { ksz: 6, stride: 1, pad: 0, out_chans: 4096 });
        assert_eq!(flops_of(&n, &edges([5, 256, 6, 6], [5, 4096, 1, 1])).unwrap(), 377_487_360);
        let n = conv_node(ConvParams { ksz: 1, stride: 1, pad: 0, out_chans: 1 });
        assert_eq!(flops_of(&n, &edges([1, 1, 1, 1], [1, 1, 1, 1])).unwrap(), 2);
    }

    #[test]
    fn flops_rejects_non_conv() {
        let mut n = conv_node(ConvParams { ksz: 1, stride: 1, pad: 0, out_chans: 1 });
        n.kind = OpKind::Activation(crate::frontend::Activation::Relu);
        assert!(matches!(flops_of(&n, &BTreeMap::new()), Err(FrontendError::UnsupportedKind(_))));
    }

    #[test]
    fn non_positive_output() {
        let g = crate::frontend::parse_net(
            "input: \"d\" input_dim: 1 input_dim: 1 input_dim: 3 input_dim: 3 \
             layer { name: \"c\" type: \"Convolution\" bottom: \"d\" top: \"c\" \
             convolution_param { num_output: 2 kernel_size: 5 } }",
        );
        assert!(matches!(g, Err(FrontendError::NonPositiveOutputDim { .. })));
    }
}
