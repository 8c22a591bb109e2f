pub mod checkpoint;
pub mod features;
pub mod loss;
pub mod mlp;
pub mod szn;
pub mod train;
pub mod zseq;

pub use mlp::{Jet, Mlp, MlpSpec};
pub use szn::{SznArch, SznModel};
pub use zseq::ZonotopeSeq;
