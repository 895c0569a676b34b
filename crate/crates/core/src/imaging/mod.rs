//! Image loading, contrastive augmentation and batch sampling.

mod augment;
mod corpus;
mod tensor;

pub use augment::{augment_pair, augment_two_views, augment_view, center_crop, AugmentSpec};
pub use corpus::{next_batch, Corpus, CorpusManifest, Domain, ManifestEntry};
pub use tensor::{load_image, load_image_for_stylize, load_image_on, save_image, save_png, ImageTensor};
