//! Procedural text-image data: glyph-rendered vehicle proposals, the
//! Vehicle-TI-style matching dataset, and multi-proposal retrieval scenes.

mod dataset;
mod render;

pub use dataset::{SCENE_CANVAS,
    
    compose_scene, compose_scene_set, corrupt_attributes, make_vti_dataset, LazyVti, Proposal,
    SceneRecord, VtiDataset, VtiRecord,
};
pub use render::{dominant_color, render_proposal, render_proposal_sized, render_scene_canvas, Jitter, RenderSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VtiError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("render error: {0}")]
    Render(String),
    #[error(transparent)]
    Gen(#[from] crate::generator::GenError),
}
