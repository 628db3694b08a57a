//! Checkpoint format: one JSON header line followed by the flat parameter
//! array as little-endian `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Encoder, EncoderConfig};
use crate::error::{Error, Result};

const FORMAT: &str = "kc-encoder";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: EncoderConfig,
    n_params: usize,
}

impl Encoder {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            config: self.config,
            n_params: self.params.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Encoder> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(line.trim_end())?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::validation(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                header.format,
                header.version
            )));
        }
        header.config.validate()?;
        let expected = header.config.n_params();
        if header.n_params != expected {
            return Err(Error::validation(format!(
                "{}: header lists {} parameters, config implies {expected}",
                path.display(),
                header.n_params
            )));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() != expected * 8 {
            return Err(Error::validation(format!(
                "{}: expected {} bytes of parameters, found {}",
                path.display(),
                expected * 8,
                bytes.len()
            )));
        }
        let params = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Encoder {
            config: header.config,
            params,
        })
    }
}
