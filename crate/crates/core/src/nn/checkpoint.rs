//! Checkpoints: a directory holding `spec.toml`, one RT01 file per tensor and
//! a `manifest.tsv` of `name<TAB>file` lines.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::network::{Layer, Network, NetworkSpec};
use crate::tensor::{Shape, Tensor};

const MANIFEST: &str = "manifest.tsv";
const SPEC: &str = "spec.toml";

fn named_tensors(net: &Network) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = net
        .param_names()
        .into_iter()
        .zip(net.params())
        .map(|(n, p)| (n, p.value.clone()))
        .collect();
    for (i, layer) in net.layers().iter().enumerate() {
        if let Layer::BatchNorm(bn) = layer {
            let c = bn.channels();
            for (suffix, v) in [("running_mean", &bn.running_mean), ("running_var", &bn.running_var)] {
                let t = Tensor::from_vec(Shape::new(1, c, 1, 1), v.clone()).expect("length matches");
                out.push((format!("l{i:02}_bn_{suffix}"), t));
            }
        }
    }
    out
}

pub fn save(net: &Network, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(SPEC), net.spec().to_toml()?)?;
    let mut manifest = String::new();
    for (name, t) in named_tensors(net) {
        let file = format!("{name}.rt");
        t.save(dir.join(&file))?;
        writeln!(manifest, "{name}\t{file}").expect("write to string");
    }
    std::fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn load(dir: impl AsRef<Path>) -> Result<Network> {
    let dir = dir.as_ref();
    let spec = NetworkSpec::from_toml(&std::fs::read_to_string(dir.join(SPEC))?)?;
    let manifest = std::fs::read_to_string(dir.join(MANIFEST))?;
    let mut files = HashMap::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, file) = line
            .split_once('\t')
            .ok_or_else(|| Error::Corrupt(format!("{MANIFEST} line {}: expected name<TAB>file", lineno + 1)))?;
        files.insert(name.to_string(), file.to_string());
    }
    let mut net = Network::build(&spec, 0)?;
    let mut read = |name: &str, expected: Shape| -> Result<Tensor> {
        let file = files
            .remove(name)
            .ok_or_else(|| Error::Corrupt(format!("checkpoint is missing {name}")))?;
        let t = Tensor::load(dir.join(file))?;
        if t.shape() != expected {
            return Err(Error::ShapeMismatch(t.shape(), expected));
        }
        Ok(t)
    };
    let names = net.param_names();
    for (name, p) in names.iter().zip(net.params_mut()) {
        p.value = read(name, p.value.shape())?;
    }
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        if let Layer::BatchNorm(bn) = layer {
            let shape = Shape::new(1, bn.channels(), 1, 1);
            bn.running_mean = read(&format!("l{i:02}_bn_running_mean"), shape)?.into_data();
            bn.running_var = read(&format!("l{i:02}_bn_running_var"), shape)?.into_data();
        }
    }
    Ok(net)
}
