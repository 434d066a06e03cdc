//! Node/microphone partition of an acoustic sensor network.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of `M` microphones into `N` nodes plus the global reference
/// microphone. Microphones are numbered node by node, so node `n` owns a
/// contiguous span of indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLayout", into = "RawLayout")]
pub struct NodeLayout {
    node_sizes: Vec<usize>,
    ref_index: usize,
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawLayout {
    node_sizes: Vec<usize>,
    ref_index: usize,
}

impl TryFrom<RawLayout> for NodeLayout {
    type Error = Error;

    fn try_from(raw: RawLayout) -> Result<Self> {
        NodeLayout::new(raw.node_sizes, raw.ref_index)
    }
}

impl From<NodeLayout> for RawLayout {
    fn from(layout: NodeLayout) -> Self {
        RawLayout {
            node_sizes: layout.node_sizes,
            ref_index: layout.ref_index,
        }
    }
}

impl NodeLayout {
    /// A single node is accepted so the mask and span helpers stay total;
    /// scene generation and ODS impose their own node-count minimums.
    pub fn new(node_sizes: Vec<usize>, ref_index: usize) -> Result<Self> {
        if node_sizes.is_empty() {
            return Err(Error::Layout("at least one node is required".into()));
        }
        if let Some(n) = node_sizes.iter().position(|&m| m == 0) {
            return Err(Error::Layout(format!("node {n} has no microphones")));
        }
        let mut offsets = Vec::with_capacity(node_sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &m in &node_sizes {
            acc += m;
            offsets.push(acc);
        }
        if ref_index >= acc {
            return Err(Error::Layout(format!(
                "ref_index {ref_index} out of range for {acc} microphones"
            )));
        }
        Ok(NodeLayout {
            node_sizes,
            ref_index,
            offsets,
        })
    }

    /// Four nodes of 4, 4, 4 and 3 microphones, reference at microphone 0.
    pub fn default_asn() -> Self {
        NodeLayout::new(vec![4, 4, 4, 3], 0).expect("static layout")
    }

    pub fn node_sizes(&self) -> &[usize] {
        &self.node_sizes
    }

    pub fn num_nodes(&self) -> usize {
        self.node_sizes.len()
    }

    pub fn num_mics(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn ref_index(&self) -> usize {
        self.ref_index
    }

    pub fn with_ref_index(&self, ref_index: usize) -> Result<Self> {
        NodeLayout::new(self.node_sizes.clone(), ref_index)
    }

    /// `(start, length)` per node.
    pub fn block_spans(&self) -> Vec<(usize, usize)> {
        self.node_sizes
            .iter()
            .zip(&self.offsets)
            .map(|(&len, &start)| (start, len))
            .collect()
    }

    pub fn node_range(&self, node: usize) -> Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    pub fn node_of(&self, mic: usize) -> usize {
        self.offsets[1..].partition_point(|&end| end <= mic)
    }

    /// First microphone of every node.
    pub fn first_mics(&self) -> Vec<usize> {
        self.offsets[..self.num_nodes()].to_vec()
    }

    pub fn same_node(&self, i: usize, j: usize) -> bool {
        self.node_of(i) == self.node_of(j)
    }

    /// Off-diagonal block selector: `true` iff microphones `i` and `j` sit on
    /// different nodes.
    pub fn selection_mask(&self) -> SelectionMask {
        let m = self.num_mics();
        let node: Vec<usize> = (0..m).map(|i| self.node_of(i)).collect();
        let mut bits = vec![false; m * m];
        for i in 0..m {
            for j in 0..m {
                bits[i * m + j] = node[i] != node[j];
            }
        }
        SelectionMask { dim: m, bits }
    }
}

impl fmt::Display for NodeLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes: Vec<String> = self.node_sizes.iter().map(|m| m.to_string()).collect();
        write!(f, "[{}] ref={}", sizes.join(","), self.ref_index)
    }
}

/// Symmetric boolean `M x M` matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionMask {
    dim: usize,
    bits: Vec<bool>,
}

impl SelectionMask {
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                bits.push(f(i, j));
            }
        }
        SelectionMask { dim, bits }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.dim + j]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(sizes: &[usize]) -> NodeLayout {
        NodeLayout::new(sizes.to_vec(), 0).unwrap()
    }

    #[test]
    fn two_single_mic_nodes() {
        assert_eq!(
            layout(&[1, 1]).selection_mask().to_rows(),
            vec![vec![0, 1], vec![1, 0]]
        );
    }

    #[test]
    fn two_plus_one() {
        assert_eq!(
            layout(&[2, 1]).selection_mask().to_rows(),
            vec![vec![0, 0, 1], vec![0, 0, 1], vec![1, 1, 0]]
        );
    }

    #[test]
    fn default_layout_mask_count() {
        // enumerate pairs on distinct nodes directly from the spans
        let l = layout(&[4, 4, 4, 3]);
        let spans = l.block_spans();
        let mut expected = 0;
        for (a, &(sa, la)) in spans.iter().enumerate() {
            for (b, &(sb, lb)) in spans.iter().enumerate() {
                if a != b {
                    for _ in sa..sa + la {
                        for _ in sb..sb + lb {
                            expected += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(expected, 15 * 15 - (16 + 16 + 16 + 9));
        assert_eq!(expected, 168);
        assert_eq!(l.selection_mask().count_ones(), expected);
    }

    #[test]
    fn spans() {
        assert_eq!(layout(&[2, 2]).block_spans(), vec![(0, 2), (2, 2)]);
        assert_eq!(
            layout(&[4, 4, 4, 3]).block_spans(),
            vec![(0, 4), (4, 4), (8, 4), (12, 3)]
        );
        assert_eq!(layout(&[1]).block_spans(), vec![(0, 1)]);
    }

    #[test]
    fn node_lookup() {
        let l = layout(&[4, 4, 4, 3]);
        assert_eq!(l.node_of(0), 0);
        assert_eq!(l.node_of(3), 0);
        assert_eq!(l.node_of(4), 1);
        assert_eq!(l.node_of(14), 3);
        assert_eq!(l.first_mics(), vec![0, 4, 8, 12]);
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(NodeLayout::new(vec![], 0).is_err());
        assert!(NodeLayout::new(vec![2, 0], 0).is_err());
        assert!(NodeLayout::new(vec![2, 1], 3).is_err());
    }

    #[test]
    fn serde_rejects_invalid_reference() {
        let bad = r#"{"node_sizes":[1,1],"ref_index":5}"#;
        assert!(serde_json::from_str::<NodeLayout>(bad).is_err());
        let good: NodeLayout =
            serde_json::from_str(r#"{"node_sizes":[2,1],"ref_index":2}"#).unwrap();
        assert_eq!(good.num_mics(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mask_structure(sizes in prop::collection::vec(1usize..5, 1..6)) {
                let l = NodeLayout::new(sizes.clone(), 0).unwrap();
                let m = l.num_mics();
                let s = l.selection_mask();
                let sq: usize = sizes.iter().map(|x| x * x).sum();
                prop_assert_eq!(s.count_ones(), m * m - sq);
                for i in 0..m {
                    prop_assert!(!s.get(i, i));
                    for j in 0..m {
                        prop_assert_eq!(s.get(i, j), s.get(j, i));
                    }
                }
                let lens: Vec<usize> = l.block_spans().iter().map(|s| s.1).collect();
                prop_assert_eq!(lens, sizes);
            }
        }
    }
}
