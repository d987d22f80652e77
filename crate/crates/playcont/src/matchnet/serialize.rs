//! Model files: magic `PMN1`, a length-prefixed `key=value` text header
//! echoing the configuration, little-endian f64 blobs for parameters and
//! running statistics, and a trailing CRC-32 of everything before it.
//!
//! Floats in the header are written with Rust's shortest round-trip
//! formatting, so a save→load→save cycle is byte-identical.

use std::path::Path;

use super::{init, MatchNet, MatchNetConfig, MatchNetError};

const MAGIC: &[u8; 4] = b"PMN1";
const VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> MatchNetError {
    MatchNetError::Io { path: path.display().to_string(), source }
}

fn header_text(config: &MatchNetConfig) -> String {
    format!(
        "version={VERSION}\n\
         input_dim={}\nhidden_dim={}\nf_blocks={}\ng_hidden={}\n\
         dropout_rate={}\nbatch_norm={}\nbn_epsilon={}\nbn_momentum={}\n\
         learning_rate={}\nbatch_size={}\nmax_epochs={}\npatience={}\n",
        config.input_dim,
        config.hidden_dim,
        config.f_blocks,
        config.g_hidden,
        config.dropout_rate,
        config.batch_norm,
        config.bn_epsilon,
        config.bn_momentum,
        config.learning_rate,
        config.batch_size,
        config.max_epochs,
        config.patience,
    )
}

pub(super) fn save(net: &MatchNet, path: &Path) -> Result<(), MatchNetError> {
    let header = header_text(net.config());
    let mut buf = Vec::with_capacity(header.len() + 8 * net.n_params() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&u32::try_from(header.len()).unwrap().to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for v in net.params_flat() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in net.running_stats_flat() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&crc32fast::hash(&buf).to_le_bytes());
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

struct HeaderMap(std::collections::BTreeMap<String, String>);

impl HeaderMap {
    fn parse(text: &str) -> Result<HeaderMap, MatchNetError> {
        let mut map = std::collections::BTreeMap::new();
        for line in text.lines() {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(bad(format!("duplicate header key {key:?}")));
            }
        }
        Ok(HeaderMap(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T, MatchNetError> {
        let raw = self
            .0
            .get(key)
            .ok_or_else(|| bad(format!("missing header key {key:?}")))?;
        raw.parse()
            .map_err(|_| bad(format!("header key {key:?} has unparsable value {raw:?}")))
    }
}

fn bad(msg: String) -> MatchNetError {
    MatchNetError::BadModel(msg)
}

pub(super) fn load(path: &Path) -> Result<MatchNet, MatchNetError> {
    let buf = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if buf.len() < MAGIC.len() + 4 + 4 {
        return Err(bad("file too short".into()));
    }
    if &buf[..4] != MAGIC {
        return Err(bad("wrong magic bytes".into()));
    }
    let (body, stored_crc) = buf.split_at(buf.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(stored_crc.try_into().unwrap()) {
        return Err(bad("checksum mismatch".into()));
    }

    let header_len = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let blob_start = 8 + header_len;
    if blob_start > body.len() {
        return Err(bad("header length exceeds file size".into()));
    }
    let header = std::str::from_utf8(&buf[8..blob_start])
        .map_err(|_| bad("header is not UTF-8".into()))?;
    let map = HeaderMap::parse(header)?;
    let version: u32 = map.get("version")?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let config = MatchNetConfig {
        input_dim: map.get("input_dim")?,
        hidden_dim: map.get("hidden_dim")?,
        f_blocks: map.get("f_blocks")?,
        g_hidden: map.get("g_hidden")?,
        dropout_rate: map.get("dropout_rate")?,
        batch_norm: map.get("batch_norm")?,
        bn_epsilon: map.get("bn_epsilon")?,
        bn_momentum: map.get("bn_momentum")?,
        learning_rate: map.get("learning_rate")?,
        batch_size: map.get("batch_size")?,
        max_epochs: map.get("max_epochs")?,
        patience: map.get("patience")?,
    };
    config
        .validate()
        .map_err(|e| bad(format!("invalid configuration in header: {e}")))?;

    let mut net = init(&config, 0)?;
    let n_params = net.n_params();
    let n_running = net.running_stats_flat().len();
    let expected = blob_start + 8 * (n_params + n_running);
    if body.len() != expected {
        return Err(bad(format!(
            "payload holds {} bytes of parameters, expected {}",
            body.len() - blob_start,
            expected - blob_start
        )));
    }
    let read_f64s = |offset: usize, n: usize| {
        ndarray::Array1::from_iter((0..n).map(|i| {
            let at = offset + 8 * i;
            f64::from_le_bytes(body[at..at + 8].try_into().unwrap())
        }))
    };
    let params = read_f64s(blob_start, n_params);
    let running = read_f64s(blob_start + 8 * n_params, n_running);
    if params.iter().chain(running.iter()).any(|v| !v.is_finite()) {
        return Err(bad("non-finite parameter value".into()));
    }
    net.set_params_flat(&params);
    net.set_running_stats_flat(&running);
    Ok(net)
}
