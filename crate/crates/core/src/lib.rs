//! Feature-range analysis for hybrid automata with affine dynamics.

pub mod corpus;
pub mod drh;
pub mod feature;
pub mod flowpipe;
pub mod haslac;
pub mod interval;
pub mod lex;
pub mod model;
pub mod pipeline;
pub mod refine;
pub mod replay;
pub mod sim;
pub mod solver;
pub mod sx;
pub mod system;
pub mod monitor;
pub mod trace;
