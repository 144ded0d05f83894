//! Multi-fidelity graph neural network interatomic potential.
//!
//! Structures are turned into periodic crystal graphs, a message-passing
//! network predicts energies, and forces and stresses follow from exact
//! derivatives of that energy. Fidelity (the level of theory a label was
//! computed at) can enter through the embedding, the messages, the readout
//! and a per-fidelity composition baseline.

pub mod error;
pub mod graph;
pub mod lin3;
pub mod model;
pub mod structures;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
pub use graph::{
    build_crystal_graph, build_neighbor_list, CrystalGraph, Edge, GraphConfig, Triplet,
};
pub use model::{FidelityConfig, Model, ModelConfig, ModelParams, Prediction};
pub use structures::{
    composition_vector, parse_frames, split_dataset, write_frames, LabeledFrame, Structure,
};
