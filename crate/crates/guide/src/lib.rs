//! Keeps the book honest. mdbook renders `book/src` but cannot run the code
//! samples, so every chapter is included here as module documentation and
//! `cargo test --doc` runs each fenced Rust block as a doc-test. One module
//! per chapter, so a failing test names the Markdown file it came from.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}
#[doc = include_str!("../../../book/src/angular-geometry.md")]
pub mod angular_geometry {}
#[doc = include_str!("../../../book/src/gaussian-process.md")]
pub mod gaussian_process {}
#[doc = include_str!("../../../book/src/lengthscale-search.md")]
pub mod lengthscale_search {}
#[doc = include_str!("../../../book/src/localized-regression.md")]
pub mod localized_regression {}
#[doc = include_str!("../../../book/src/depth-fields.md")]
pub mod depth_fields {}
#[doc = include_str!("../../../book/src/splatting.md")]
pub mod splatting {}
#[doc = include_str!("../../../book/src/synthetic-scenes.md")]
pub mod synthetic_scenes {}
#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
