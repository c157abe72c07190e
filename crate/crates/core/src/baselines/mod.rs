//! Comparison learners: batch CART regression trees and the direct-RL
//! continuous U-tree.

mod cart;
mod cut;

pub use cart::{cart_fit, CartConfig, CartForest, CartNode, CartTree};
pub use cut::{cut_learn, CutConfig, CutLeaf, CutTree};
