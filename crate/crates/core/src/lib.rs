pub mod actions;
pub mod analytics;
pub mod colormap;
pub mod core;
pub mod data;
pub mod error;
pub mod events;
pub mod ids;
pub mod io;
pub mod layout;
pub mod payload;
pub mod plugins;
pub mod project;
pub mod registry;

// The guide's listings run as doc-tests of this crate, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/events.md")]
    mod events {}
    #[doc = include_str!("../../../book/src/actions.md")]
    mod actions {}
    #[doc = include_str!("../../../book/src/plugins.md")]
    mod plugins {}
    #[doc = include_str!("../../../book/src/analytics.md")]
    mod analytics {}
    #[doc = include_str!("../../../book/src/projects.md")]
    mod projects {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
