//! HTTP service and command-line front end over `sssp-core`.

pub mod gallery;
pub mod service;
pub mod session;

pub use gallery::{build_gallery, GalleryEntry, GALLERY_SEEDS};
pub use service::{router, AppState, ServiceConfig};
pub use session::{Session, SessionStore};
