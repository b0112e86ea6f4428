//! Tree-structured LSTM cells and constrained tree-to-tree transductions.
//!
//! The crate provides labeled rooted ordered trees, a small reverse-mode
//! automatic differentiation engine over dynamically built computation
//! graphs, three TreeLSTM cell variants (top-down, Child-Sum, N-ary),
//! output heads for tree classification, node relabeling and
//! structure-to-substructure pruning, plus training (Adam, L2, early
//! stopping) and the evaluation metrics that go with those tasks.
//!
//! The crate is `no_std` (with `alloc`); file formats, corpus loaders and
//! the command line live in the companion `treelstm` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod cells;
pub mod metrics;
pub mod tensor;
pub mod training;
pub mod transduction;
pub mod tree;
