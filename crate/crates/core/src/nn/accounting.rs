use std::fmt::Write;

use super::spec::{NetworkSpec, OpKind};

/// One row of the per-layer parameter and FLOP table.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRow {
    pub name: String,
    pub kind: OpKind,
    pub kernel: usize,
    pub groups: usize,
    pub dilation: usize,
    pub stride: usize,
    pub params: usize,
    pub flops: u64,
    pub cumulative_params: usize,
    pub cumulative_flops: u64,
}

pub fn layer_table(spec: &NetworkSpec) -> Vec<LayerRow> {
    let (mut params, mut flops) = (0, 0);
    spec.weighted_layers()
        .into_iter()
        .map(|named| {
            let l = named.layer;
            let (h, w) = named.input_hw;
            let (p, f) = (l.param_count(), l.flops(h, w));
            params += p;
            flops += f;
            LayerRow {
                name: named.name,
                kind: l.op_kind,
                kernel: l.kernel,
                groups: l.groups,
                dilation: l.dilation,
                stride: l.stride,
                params: p,
                flops: f,
                cumulative_params: params,
                cumulative_flops: flops,
            }
        })
        .collect()
}

/// Number of stored weights and biases.
pub fn param_count(spec: &NetworkSpec) -> usize {
    spec.weighted_layers().iter().map(|n| n.layer.param_count()).sum()
}

/// FLOPs (two per multiply-accumulate) of one forward pass on a `rows × cols` input.
/// Activations, pooling, split and concat are not counted.
pub fn flop_count(spec: &NetworkSpec, (rows, cols): (usize, usize)) -> u64 {
    let sized = NetworkSpec { input_rows: rows, input_cols: cols, ..spec.clone() };
    layer_table(&sized).last().map_or(0, |r| r.cumulative_flops)
}

pub fn format_layer_table(rows: &[LayerRow]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<16} {:<6} {:>2} {:>3} {:>2} {:>2} {:>9} {:>12} {:>10} {:>13}",
        "layer", "kind", "k", "G", "d", "s", "params", "flops", "cum_params", "cum_flops"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<16} {:<6} {:>2} {:>3} {:>2} {:>2} {:>9} {:>12} {:>10} {:>13}",
            r.name,
            r.kind.as_str(),
            r.kernel,
            r.groups,
            r.dilation,
            r.stride,
            r.params,
            r.flops,
            r.cumulative_params,
            r.cumulative_flops
        )
        .unwrap();
    }
    if let Some(last) = rows.last() {
        writeln!(out, "total params {}", last.cumulative_params).unwrap();
        writeln!(out, "total flops {}", last.cumulative_flops).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, Network};

    #[test]
    fn separable_flops_below_quarter() {
        let conv = LayerSpec::new(OpKind::Conv, 3, 32, 32);
        let sep = LayerSpec::new(OpKind::SConv, 3, 32, 32);
        for (h, w) in [(1, 1), (8, 8), (400, 60), (17, 3)] {
            assert!(4 * sep.flops(h, w) < conv.flops(h, w));
        }
        assert_eq!(conv.flops(1, 1), 2 * 9 * 32 * 32);
    }

    #[test]
    fn table_totals_match() {
        let spec = NetworkSpec::default();
        let rows = layer_table(&spec);
        let last = rows.last().unwrap();
        assert_eq!(last.cumulative_params, param_count(&spec));
        assert_eq!(last.cumulative_flops, flop_count(&spec, (400, 60)));
        assert_eq!(param_count(&spec), Network::<f32>::zeros(spec.clone()).unwrap().param_count());
        let text = format_layer_table(&rows);
        assert!(text.contains(&format!("total params {}", param_count(&spec))));
    }

    #[test]
    fn block_flops_hand_count() {
        let mut spec = NetworkSpec::default();
        spec.time_branch.truncate(1);
        spec.freq_branch.clear();
        spec.head = vec![7];
        let b = spec.time_branch[0];
        let (h, w) = (400, 60);
        let (oh, ow) = (200, 30);
        let half = b.channels_mid / 2;
        let macs = h * w * b.channels_mid
            + oh * ow * 9 * half
            + oh * ow * half * half
            + oh * ow * b.channels_mid * b.channels_out
            + 200 * 16 * 7;
        assert_eq!(flop_count(&spec, (h, w)), 2 * macs as u64);
    }
}
