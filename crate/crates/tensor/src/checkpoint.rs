//! Text checkpoints for networks: layer list plus flat parameter arrays.
//!
//! The format is line-oriented. Values are written with Rust's shortest
//! round-trip f64 formatting, so a save/load cycle reproduces every value
//! exactly even though the bytes are human-readable.

use std::io::{BufRead, Write};

use crate::layer::{Layer, Padding};
use crate::network::{Network, Param, RunningStats};
use crate::tensor::Tensor;
use crate::{Result, TensorError};

const HEADER: &str = "calonet v1";

pub fn save_network(net: &Network, w: &mut impl Write) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    writeln!(
        w,
        "input {}",
        net.input_shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    )?;
    for layer in net.layers() {
        match layer {
            Layer::Dense {
                in_features,
                out_features,
                ..
            } => writeln!(w, "layer dense in={in_features} out={out_features}")?,
            Layer::Conv3d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => writeln!(
                w,
                "layer conv3d in={in_channels} out={out_channels} kernel={},{},{} stride={stride} padding={}",
                kernel[0],
                kernel[1],
                kernel[2],
                match padding {
                    Padding::Valid => "valid",
                    Padding::Same => "same",
                }
            )?,
            Layer::BatchNorm {
                features,
                eps,
                momentum,
                ..
            } => writeln!(w, "layer batchnorm features={features} eps={eps} momentum={momentum}")?,
            Layer::LeakyRelu { slope } => writeln!(w, "layer leaky_relu slope={slope}")?,
            Layer::Relu => writeln!(w, "layer relu")?,
            Layer::Sigmoid => writeln!(w, "layer sigmoid")?,
            Layer::Tanh => writeln!(w, "layer tanh")?,
            Layer::Flatten => writeln!(w, "layer flatten")?,
            Layer::Reshape { shape } => writeln!(
                w,
                "layer reshape {}",
                shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
            )?,
            Layer::ConcatInput => writeln!(w, "layer concat_input")?,
        }
    }
    for p in net.params() {
        writeln!(
            w,
            "param {} dims={}",
            p.name,
            p.value
                .shape()
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(",")
        )?;
        write_values(w, p.value.data())?;
    }
    for (i, s) in net.stats().iter().enumerate() {
        writeln!(w, "stats {i} mean dims={}", s.mean.len())?;
        write_values(w, &s.mean)?;
        writeln!(w, "stats {i} var dims={}", s.var.len())?;
        write_values(w, &s.var)?;
    }
    writeln!(w, "end")?;
    Ok(())
}

fn write_values(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for chunk in values.chunks(8) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

struct LineReader<R> {
    inner: R,
    line_no: usize,
}

impl<R: BufRead> LineReader<R> {
    fn next_line(&mut self) -> Result<Option<String>> {
        let mut buf = String::new();
        let n = self.inner.read_line(&mut buf)?;
        if n == 0 {
            return Ok(None);
        }
        self.line_no += 1;
        Ok(Some(buf.trim_end().to_string()))
    }

    fn expect_line(&mut self) -> Result<String> {
        self.next_line()?.ok_or_else(|| TensorError::Checkpoint {
            line: self.line_no + 1,
            message: "unexpected end of file".into(),
        })
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(TensorError::Checkpoint {
            line: self.line_no,
            message: message.into(),
        })
    }

    fn read_values(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let line = self.expect_line()?;
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| TensorError::Checkpoint {
                        line: self.line_no,
                        message: format!("bad value `{tok}`"),
                    })?;
                out.push(v);
            }
        }
        if out.len() != count {
            return self.err(format!("expected {count} values, found {}", out.len()));
        }
        Ok(out)
    }
}

fn kv<'a>(tok: &'a str, key: &str, line_no: usize) -> Result<&'a str> {
    tok.strip_prefix(key)
        .and_then(|s| s.strip_prefix('='))
        .ok_or_else(|| TensorError::Checkpoint {
            line: line_no,
            message: format!("expected `{key}=...`, found `{tok}`"),
        })
}

fn parse_num<T: std::str::FromStr>(s: &str, line_no: usize) -> Result<T> {
    s.parse().map_err(|_| TensorError::Checkpoint {
        line: line_no,
        message: format!("bad number `{s}`"),
    })
}

pub fn load_network(r: impl BufRead) -> Result<Network> {
    let mut rd = LineReader { inner: r, line_no: 0 };
    let header = rd.expect_line()?;
    if header != HEADER {
        return rd.err(format!("bad header `{header}`"));
    }
    let input_line = rd.expect_line()?;
    let input_shape: Vec<usize> = match input_line.strip_prefix("input ") {
        Some(rest) => rest
            .split_whitespace()
            .map(|t| parse_num(t, rd.line_no))
            .collect::<Result<_>>()?,
        None => return rd.err("expected `input ...`"),
    };

    let mut layers: Vec<Layer> = Vec::new();
    let mut expected_params: Vec<(String, Vec<usize>)> = Vec::new();
    let mut stats: Vec<RunningStats> = Vec::new();
    let mut cur = input_shape.clone();
    let mut line = rd.expect_line()?;
    while let Some(rest) = line.strip_prefix("layer ") {
        let toks: Vec<&str> = rest.split_whitespace().collect();
        let idx = layers.len();
        let layer = match toks[0] {
            "dense" => {
                let in_f: usize = parse_num(kv(toks[1], "in", rd.line_no)?, rd.line_no)?;
                let out_f: usize = parse_num(kv(toks[2], "out", rd.line_no)?, rd.line_no)?;
                expected_params.push((format!("layer{idx}.weight"), vec![out_f, in_f]));
                expected_params.push((format!("layer{idx}.bias"), vec![out_f]));
                Layer::Dense {
                    in_features: in_f,
                    out_features: out_f,
                    weight: expected_params.len() - 2,
                    bias: expected_params.len() - 1,
                }
            }
            "conv3d" => {
                let in_c: usize = parse_num(kv(toks[1], "in", rd.line_no)?, rd.line_no)?;
                let out_c: usize = parse_num(kv(toks[2], "out", rd.line_no)?, rd.line_no)?;
                let kparts: Vec<usize> = kv(toks[3], "kernel", rd.line_no)?
                    .split(',')
                    .map(|t| parse_num(t, rd.line_no))
                    .collect::<Result<_>>()?;
                if kparts.len() != 3 {
                    return rd.err("kernel must have three extents");
                }
                let stride: usize = parse_num(kv(toks[4], "stride", rd.line_no)?, rd.line_no)?;
                let padding = match kv(toks[5], "padding", rd.line_no)? {
                    "valid" => Padding::Valid,
                    "same" => Padding::Same,
                    other => return rd.err(format!("bad padding `{other}`")),
                };
                expected_params.push((
                    format!("layer{idx}.weight"),
                    vec![out_c, in_c, kparts[0], kparts[1], kparts[2]],
                ));
                expected_params.push((format!("layer{idx}.bias"), vec![out_c]));
                Layer::Conv3d {
                    in_channels: in_c,
                    out_channels: out_c,
                    kernel: [kparts[0], kparts[1], kparts[2]],
                    stride,
                    padding,
                    weight: expected_params.len() - 2,
                    bias: expected_params.len() - 1,
                }
            }
            "batchnorm" => {
                let features: usize = parse_num(kv(toks[1], "features", rd.line_no)?, rd.line_no)?;
                let eps: f64 = parse_num(kv(toks[2], "eps", rd.line_no)?, rd.line_no)?;
                let momentum: f64 = parse_num(kv(toks[3], "momentum", rd.line_no)?, rd.line_no)?;
                expected_params.push((format!("layer{idx}.gamma"), vec![features]));
                expected_params.push((format!("layer{idx}.beta"), vec![features]));
                stats.push(RunningStats {
                    mean: vec![0.0; features],
                    var: vec![1.0; features],
                });
                Layer::BatchNorm {
                    features,
                    eps,
                    momentum,
                    gamma: expected_params.len() - 2,
                    beta: expected_params.len() - 1,
                    stats: stats.len() - 1,
                }
            }
            "leaky_relu" => Layer::LeakyRelu {
                slope: parse_num(kv(toks[1], "slope", rd.line_no)?, rd.line_no)?,
            },
            "relu" => Layer::Relu,
            "sigmoid" => Layer::Sigmoid,
            "tanh" => Layer::Tanh,
            "flatten" => Layer::Flatten,
            "reshape" => Layer::Reshape {
                shape: toks[1]
                    .split(',')
                    .map(|t| parse_num(t, rd.line_no))
                    .collect::<Result<_>>()?,
            },
            "concat_input" => Layer::ConcatInput,
            other => return rd.err(format!("unknown layer kind `{other}`")),
        };
        // Track the shape chain so a corrupt file fails here, not at use.
        cur = crate::network::layer_shape_for_load(&layer, &cur, &input_shape)?;
        layers.push(layer);
        line = rd.expect_line()?;
    }

    let mut params: Vec<Param> = Vec::new();
    while let Some(rest) = line.strip_prefix("param ") {
        let toks: Vec<&str> = rest.split_whitespace().collect();
        let name = toks[0].to_string();
        let dims: Vec<usize> = kv(toks[1], "dims", rd.line_no)?
            .split(',')
            .map(|t| parse_num(t, rd.line_no))
            .collect::<Result<_>>()?;
        let idx = params.len();
        match expected_params.get(idx) {
            Some((want_name, want_dims)) if *want_name == name && *want_dims == dims => {}
            Some((want_name, _)) => {
                return rd.err(format!("expected param `{want_name}`, found `{name}`"))
            }
            None => return rd.err(format!("unexpected extra param `{name}`")),
        }
        let count: usize = dims.iter().product();
        let values = rd.read_values(count)?;
        params.push(Param {
            name,
            value: Tensor::new(dims, values)?,
        });
        line = rd.expect_line()?;
    }
    if params.len() != expected_params.len() {
        return rd.err(format!(
            "expected {} params, found {}",
            expected_params.len(),
            params.len()
        ));
    }

    while let Some(rest) = line.strip_prefix("stats ") {
        let toks: Vec<&str> = rest.split_whitespace().collect();
        let idx: usize = parse_num(toks[0], rd.line_no)?;
        let field = toks[1];
        let dims: usize = parse_num(kv(toks[2], "dims", rd.line_no)?, rd.line_no)?;
        let values = rd.read_values(dims)?;
        let slot = stats.get_mut(idx).ok_or_else(|| TensorError::Checkpoint {
            line: rd.line_no,
            message: format!("stats index {idx} out of range"),
        })?;
        match field {
            "mean" => slot.mean = values,
            "var" => slot.var = values,
            other => return rd.err(format!("bad stats field `{other}`")),
        }
        line = rd.expect_line()?;
    }
    if line != "end" {
        return rd.err(format!("expected `end`, found `{line}`"));
    }
    Ok(Network::from_parts(input_shape, layers, params, stats))
}

pub fn save_network_file(net: &Network, path: &std::path::Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_network(net, &mut f)
}

pub fn load_network_file(path: &std::path::Path) -> Result<Network> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_network(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{evaluate, Mode, NetworkBuilder};
    use crate::PrecisionMode;

    fn sample_net() -> Network {
        NetworkBuilder::new(&[1, 4, 4, 4], 21)
            .conv3d(2, [3, 3, 3], 1, Padding::Same)
            .unwrap()
            .batchnorm()
            .unwrap()
            .relu()
            .flatten()
            .dense(3)
            .unwrap()
            .tanh()
            .build()
    }

    #[test]
    fn round_trip_is_value_exact() {
        let mut net = sample_net();
        // Move running stats off their init values first.
        let x = Tensor::new(vec![2, 1, 4, 4, 4], (0..128).map(|i| (i % 9) as f64 * 0.13).collect())
            .unwrap();
        evaluate(&mut net, &x, Mode::Train, PrecisionMode::Full).unwrap();

        let mut buf = Vec::new();
        save_network(&net, &mut buf).unwrap();
        let loaded = load_network(std::io::BufReader::new(buf.as_slice())).unwrap();

        assert_eq!(net.max_param_abs_diff(&loaded), 0.0);
        for (a, b) in net.stats().iter().zip(loaded.stats()) {
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.var, b.var);
        }
        let mut loaded = loaded;
        let ya = evaluate(&mut net, &x, Mode::Eval, PrecisionMode::Full).unwrap();
        let yb = evaluate(&mut loaded, &x, Mode::Eval, PrecisionMode::Full).unwrap();
        assert_eq!(ya.output().data(), yb.output().data());
    }

    #[test]
    fn corrupt_header_is_rejected() {
        let err = load_network(std::io::BufReader::new(&b"nope v9\n"[..])).unwrap_err();
        assert!(matches!(err, TensorError::Checkpoint { line: 1, .. }));
    }
}
