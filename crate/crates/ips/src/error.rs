use std::io;
use std::path::{Path, PathBuf};

use ips_core::raypath::RayError;
use ips_core::scene::GeometryError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Ray(#[from] RayError),
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(msg: impl std::fmt::Display) -> Self {
        Error::Parse(msg.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
