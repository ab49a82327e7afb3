//! Binary artifact plumbing shared by dataset files and model checkpoints.

mod container;
mod crc32;

pub use container::{
    read_container, write_container, ArrayReader, ArrayWriter, ContainerError, ContainerHeader,
    CONTAINER_VERSION,
};
pub use crc32::crc32;
