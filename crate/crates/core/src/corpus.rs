//! The 43 benchmark convolutions of the appendix operation table.
//!
//! Stored as CSV; `pad` is not printed in the table and was recovered as
//! the smallest padding that reproduces the printed output size.

use serde::Deserialize;
use thiserror::Error;

use crate::frontend::{conv_out_size, flops_of, infer_shapes, ComputeGraph, ConvParams, OpKind, OpNode};
use crate::variants::{canonical, ConvOp, GenError};

pub const APPENDIX_A_CSV: &str = include_str!("../data/appendix_a.csv");

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("corpus row {row}: {msg}")]
    Row { row: usize, msg: String },
}

/// One table row. Spatial sizes are as printed (`y x x x chan`).
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct CorpusRow {
    pub ksz: usize,
    pub stride: usize,
    pub pad: usize,
    pub oc: usize,
    pub b: usize,
    pub in_y: usize,
    pub in_x: usize,
    pub in_c: usize,
    pub out_y: usize,
    pub out_x: usize,
    pub out_c: usize,
    /// FLOPs exactly as printed.
    pub flops: String,
}

impl CorpusRow {
    pub fn params(&self) -> ConvParams {
        ConvParams { ksz: self.ksz, stride: self.stride, pad: self.pad, out_chans: self.oc }
    }

    /// The row's convolution with shapes inferred from its parameters.
    pub fn conv_op(&self) -> Result<ConvOp, GenError> {
        ConvOp::new(self.params(), None, self.b, self.in_c, self.in_y, self.in_x)
    }

    pub fn printed_flops(&self) -> f64 {
        self.flops.parse().unwrap_or(f64::NAN)
    }
}

/// Rounds to `digits` significant figures.
pub fn round_sig(v: f64, digits: usize) -> f64 {
    format!("{:.*e}", digits.saturating_sub(1), v).parse().expect("float text")
}

/// True when `computed` rounds to the printed value at 6 significant figures.
pub fn flops_match(computed: u64, printed: &str) -> bool {
    printed.parse::<f64>().is_ok_and(|p| round_sig(computed as f64, 6) == round_sig(p, 6))
}

pub fn parse_corpus(text: &str) -> Result<Vec<CorpusRow>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, r) in rdr.deserialize().enumerate() {
        let row: CorpusRow = r?;
        if row.ksz == 0 || row.stride == 0 || row.b == 0 || row.in_c == 0 || row.oc == 0 {
            return Err(CorpusError::Row { row: i + 1, msg: "sizes must be positive".into() });
        }
        if conv_out_size(row.in_y, row.ksz, row.stride, row.pad).is_none() {
            return Err(CorpusError::Row { row: i + 1, msg: "window does not fit the input".into() });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// The embedded appendix table.
pub fn appendix_a() -> Vec<CorpusRow> {
    parse_corpus(APPENDIX_A_CSV).expect("embedded corpus is valid")
}

/// A graph with one independent input → convolution chain per row.
pub fn corpus_graph(rows: &[CorpusRow]) -> ComputeGraph {
    let mut g = ComputeGraph::default();
    for (i, r) in rows.iter().enumerate() {
        let op = r.conv_op().expect("validated row");
        let (data, conv) = (format!("data{i}"), format!("conv{i}"));
        let (filts, biases, out) = (format!("{conv}_filts"), format!("{conv}_biases"), conv.clone());
        g.nodes.push(OpNode { name: data.clone(), kind: OpKind::Input, inputs: vec![], outputs: vec![data.clone()], fused_activation: None });
        g.nodes.push(OpNode {
            name: conv.clone(),
            kind: OpKind::Convolution(r.params()),
            inputs: vec![data.clone(), filts.clone(), biases.clone()],
            outputs: vec![out.clone()],
            fused_activation: None,
        });
        g.edges.insert(data.clone(), op.input.clone());
        g.edges.insert(filts.clone(), op.filts_dims());
        g.edges.insert(biases.clone(), op.biases_dims());
        g.edges.insert(out, op.out.clone());
        g.sources.push(data);
        g.params.insert(filts);
        g.params.insert(biases);
    }
    g.recompute_sinks();
    g
}

/// Checks every row through the front end: inferred output dims must equal
/// the printed ones and FLOPs must match at 6 significant figures.
pub fn self_check(rows: &[CorpusRow]) -> Result<(), CorpusError> {
    for (i, r) in rows.iter().enumerate() {
        let bad = |msg: String| CorpusError::Row { row: i + 1, msg };
        let g = corpus_graph(std::slice::from_ref(r));
        let g = infer_shapes(&g, &canonical(&[r.b, r.in_c, r.in_y, r.in_x])).map_err(|e| bad(e.to_string()))?;
        let node = &g.nodes[1];
        let out = g.dims(&node.outputs[0]).map_err(|e| bad(e.to_string()))?;
        if *out != printed_out_dims(r) {
            return Err(bad(format!("inferred {out}, table says {}", printed_out_dims(r))));
        }
        let f = flops_of(node, &g.edges).map_err(|e| bad(e.to_string()))?;
        if !flops_match(f, &r.flops) {
            return Err(bad(format!("computed {f} FLOPs, table says {}", r.flops)));
        }
    }
    Ok(())
}

/// Output dims of a row as `img:chan:y:x` sizes.
pub fn printed_out_dims(r: &CorpusRow) -> crate::nda::DimsSpec {
    canonical(&[r.b, r.out_c, r.out_y, r.out_x])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shapes_and_flops() {
        let rows = appendix_a();
        assert_eq!(rows.len(), 43);
        for r in &rows {
            let op = r.conv_op().unwrap();
            assert_eq!(op.out, printed_out_dims(r), "{r:?}");
            assert!(flops_match(op.flops(), &r.flops), "{r:?}: {}", op.flops());
        }
        assert_eq!(rows[0].conv_op().unwrap().flops(), 100_352_000);
    }

    #[test]
    fn self_check_gate() {
        self_check(&appendix_a()).unwrap();
        let mut rows = appendix_a();
        rows[3].flops = "1.0e+08".into();
        assert!(matches!(self_check(&rows), Err(CorpusError::Row { row: 4, .. })));
        let mut rows = appendix_a();
        rows[0].out_y += 1;
        assert!(self_check(&rows).is_err());
        assert!(parse_corpus("").unwrap().is_empty());
        assert!(parse_corpus("ksz,stride,pad,oc,b,in_y,in_x,in_c,out_y,out_x,out_c,flops\n").unwrap().is_empty());
    }

    #[test]
    fn fc_row_flops() {
        let fc = appendix_a().into_iter().find(|r| r.ksz == 6).unwrap();
        assert_eq!(fc.conv_op().unwrap().flops(), 377_487_360);
        assert!(flops_match(377_487_360, "3.77487e+08"));
        assert!(!flops_match(377_487_360, "3.77487e+09"));
    }

    #[test]
    fn sig_fig_rounding() {
        assert!(flops_match(325_140_480, "3.2514e+08"));
        assert!(!flops_match(325_150_480, "3.2514e+08"));
        assert_eq!(round_sig(1_003_524.0, 6), 1_003_520.0);
    }

    #[test]
    fn bad_rows_rejected() {
        let hdr = "ksz,stride,pad,oc,b,in_y,in_x,in_c,out_y,out_x,out_c,flops\n";
        assert!(parse_corpus(&format!("{hdr}9,1,0,4,1,3,3,2,1,1,4,1e3\n")).is_err());
        assert!(parse_corpus(&format!("{hdr}3,1,x,4,1,3,3,2,1,1,4,1e3\n")).is_err());
    }

    #[test]
    fn corpus_graph_is_valid() {
        let g = corpus_graph(&appendix_a());
        g.validate().unwrap();
        assert_eq!(g.nodes.len(), 86);
        assert_eq!(g.sinks.len(), 43);
    }
}
