//! Parameter checkpoints: framed binary (bit-exact) or a JSON document.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{param_count, MlpParams, Network};
use crate::io::{read_framed, write_framed, FormatError};

const MAGIC: &[u8; 4] = b"CPNN";

#[derive(Serialize, Deserialize)]
struct Header {
    network: Network,
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    network: Network,
    params: MlpParams,
}

fn check(network: &Network, params: &MlpParams) -> Result<(), FormatError> {
    if params.layer_sizes != network.layer_sizes() || params.values.len() != param_count(&params.layer_sizes) {
        return Err(FormatError::Malformed(format!(
            "parameter vector of length {} does not fit layers {:?}",
            params.values.len(),
            network.layer_sizes()
        )));
    }
    Ok(())
}

pub fn write_checkpoint(path: &Path, network: &Network, params: &MlpParams) -> Result<(), FormatError> {
    check(network, params)?;
    let header = Header {
        network: network.clone(),
        seed: params.seed,
    };
    write_framed(BufWriter::new(File::create(path)?), MAGIC, &header, &params.values)
}

pub fn read_checkpoint(path: &Path) -> Result<(Network, MlpParams), FormatError> {
    let (header, values): (Header, Vec<f64>) = read_framed(BufReader::new(File::open(path)?), MAGIC)?;
    let network = header.network.rebuilt();
    let params = MlpParams {
        layer_sizes: network.layer_sizes().to_vec(),
        values,
        seed: header.seed,
    };
    check(&network, &params)?;
    Ok((network, params))
}

pub fn write_checkpoint_json(path: &Path, network: &Network, params: &MlpParams) -> Result<(), FormatError> {
    check(network, params)?;
    let doc = JsonCheckpoint {
        network: network.clone(),
        params: params.clone(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &doc)?;
    Ok(())
}

pub fn read_checkpoint_json(path: &Path) -> Result<(Network, MlpParams), FormatError> {
    let doc: JsonCheckpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let network = doc.network.rebuilt();
    check(&network, &doc.params)?;
    Ok((network, doc.params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{default_layer_sizes, InputScaling};

    fn setup() -> (Network, MlpParams) {
        let net = Network::new(
            default_layer_sizes(2),
            InputScaling::unit_box(&[(0.0, 2.0), (0.0, 0.99)]),
        );
        let p = MlpParams::init(net.layer_sizes(), 42);
        (net, p)
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let (net, p) = setup();
        write_checkpoint(&path, &net, &p).unwrap();
        let (net2, p2) = read_checkpoint(&path).unwrap();
        assert_eq!(net, net2);
        assert_eq!(p.seed, p2.seed);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&p.values), bits(&p2.values));
        assert_eq!(net2.param_count(), 3441);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let (net, p) = setup();
        write_checkpoint_json(&path, &net, &p).unwrap();
        let (net2, p2) = read_checkpoint_json(&path).unwrap();
        assert_eq!(net, net2);
        assert_eq!(p, p2);
    }

    #[test]
    fn mismatched_vector_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (net, mut p) = setup();
        p.values.pop();
        assert!(write_checkpoint(&dir.path().join("x.bin"), &net, &p).is_err());
    }
}
