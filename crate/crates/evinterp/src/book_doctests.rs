//! Binds the book's chapters as doctests so `cargo test` keeps every code
//! block in the guide compiling and passing against the current API.

#[doc = include_str!("../../../book/src/intro.md")]
pub struct IntroChapter;

#[doc = include_str!("../../../book/src/events.md")]
pub struct EventsChapter;

#[doc = include_str!("../../../book/src/scenes.md")]
pub struct ScenesChapter;

#[doc = include_str!("../../../book/src/autodiff.md")]
pub struct AutodiffChapter;

#[doc = include_str!("../../../book/src/model.md")]
pub struct ModelChapter;

#[doc = include_str!("../../../book/src/training.md")]
pub struct TrainingChapter;

#[doc = include_str!("../../../book/src/evaluation.md")]
pub struct EvaluationChapter;

#[doc = include_str!("../../../book/src/cli.md")]
pub struct CliChapter;
