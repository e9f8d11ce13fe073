//! The `book/` guide, compiled so its code blocks run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/codec.md")]
pub mod codec {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/surfaces.md")]
pub mod surfaces {}

#[doc = include_str!("../../../book/src/framing.md")]
pub mod framing {}

#[doc = include_str!("../../../book/src/frame-files.md")]
pub mod frame_files {}

#[doc = include_str!("../../../book/src/inference.md")]
pub mod inference {}

#[doc = include_str!("../../../book/src/model-bundles.md")]
pub mod model_bundles {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
