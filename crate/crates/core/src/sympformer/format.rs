//! Weight container: a text header of scalar parameters followed by a
//! binary table of named tensors.
//!
//! ```text
//! SYMPFORMER-WEIGHTS 1
//! key = value            (one per line)
//! end_header
//! u32 tensor count
//! per tensor: u32 name length, name (UTF-8), u32 rank, rank x u32 dims,
//!             prod(dims) x f64 (row-major)
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read, Write};

use super::{AttentionKind, HeadWeights, LayerScalars, LayerWeights, SympFormerConfig, SympFormerWeights, SympMethod};
use crate::{Error, Matrix, Result, Vector};

pub const WEIGHTS_MAGIC: &str = "SYMPFORMER-WEIGHTS 1";

fn join<T: ToString>(vals: impl Iterator<Item = T>) -> String {
    vals.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn header(cfg: &SympFormerConfig) -> Vec<(&'static str, String)> {
    let per = |f: fn(&LayerScalars) -> f64| join(cfg.layers.iter().map(f));
    vec![
        ("n_layers", cfg.n_layers.to_string()),
        ("n_heads", cfg.n_heads.to_string()),
        ("d_model", cfg.d_model.to_string()),
        ("block_size", cfg.block_size.to_string()),
        ("vocab_size", cfg.vocab_size.to_string()),
        ("method", cfg.method.name().to_string()),
        ("attention", cfg.attention.name().to_string()),
        ("causal", cfg.causal.to_string()),
        ("c_log", cfg.c_log.to_string()),
        ("c_lin", cfg.c_lin.to_string()),
        ("t0", cfg.t0.to_string()),
        ("h_x", per(|s| s.h_x)),
        ("h_y", per(|s| s.h_y)),
        ("m_mlp", per(|s| s.m_mlp)),
        ("beta_mlp", per(|s| s.beta_mlp)),
        ("gamma_mlp", per(|s| s.gamma_mlp)),
        ("plain_alpha", per(|s| s.plain_alpha)),
    ]
}

enum Tensor<'a> {
    Matrix(&'a Matrix),
    Vector(&'a Vector),
}

fn tensors(w: &SympFormerWeights) -> Vec<(String, Tensor<'_>)> {
    let mut out = vec![
        ("tok_emb".to_string(), Tensor::Matrix(&w.tok_emb)),
        ("pos_emb".to_string(), Tensor::Matrix(&w.pos_emb)),
        ("ln_f.gain".to_string(), Tensor::Vector(&w.ln_f_gain)),
        ("lm_head".to_string(), Tensor::Matrix(&w.lm_head)),
    ];
    for (l, layer) in w.layers.iter().enumerate() {
        for (h, head) in layer.heads.iter().enumerate() {
            out.push((format!("layers.{l}.heads.{h}.q"), Tensor::Matrix(&head.q)));
            out.push((format!("layers.{l}.heads.{h}.k"), Tensor::Matrix(&head.k)));
        }
        out.push((format!("layers.{l}.value"), Tensor::Matrix(&layer.value)));
        out.push((format!("layers.{l}.mlp.w_in"), Tensor::Matrix(&layer.w_in)));
        out.push((format!("layers.{l}.mlp.w_out"), Tensor::Matrix(&layer.w_out)));
        out.push((format!("layers.{l}.ln.gain"), Tensor::Vector(&layer.ln_gain)));
        out.push((format!("layers.{l}.ln_y.gain"), Tensor::Vector(&layer.ln_y_gain)));
        out.push((format!("layers.{l}.ln_v.gain"), Tensor::Vector(&layer.ln_v_gain)));
    }
    out
}

fn put_u32<W: Write>(out: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_weights<W: Write>(out: &mut W, cfg: &SympFormerConfig, w: &SympFormerWeights) -> Result<()> {
    cfg.validate()?;
    w.check_shapes(cfg)?;
    writeln!(out, "{WEIGHTS_MAGIC}")?;
    for (k, v) in header(cfg) {
        writeln!(out, "{k} = {v}")?;
    }
    writeln!(out, "end_header")?;
    let list = tensors(w);
    put_u32(out, list.len())?;
    for (name, t) in list {
        put_u32(out, name.len())?;
        out.write_all(name.as_bytes())?;
        match t {
            Tensor::Matrix(m) => {
                put_u32(out, 2)?;
                put_u32(out, m.nrows())?;
                put_u32(out, m.ncols())?;
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        out.write_all(&m[(i, j)].to_le_bytes())?;
                    }
                }
            }
            Tensor::Vector(v) => {
                put_u32(out, 1)?;
                put_u32(out, v.len())?;
                for x in v.iter() {
                    out.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated tensor table: {e}")))?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated tensor data: {e}")))?;
    Ok(f64::from_le_bytes(b))
}

fn parse_header(lines: &BTreeMap<String, String>) -> Result<SympFormerConfig> {
    let get = |k: &str| lines.get(k).ok_or_else(|| Error::Format(format!("header is missing `{k}`")));
    let uint = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("header `{k}` is not an unsigned integer")))
    };
    let real = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("header `{k}` is not a number")))
    };
    let list = |k: &str, n: usize| -> Result<Vec<f64>> {
        let raw = get(k)?;
        let vals: Vec<f64> = if raw.is_empty() {
            Vec::new()
        } else {
            raw.split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("header `{k}` is not a number list")))?
        };
        if vals.len() != n {
            return Err(Error::Format(format!("header `{k}` has {} entries for {n} layers", vals.len())));
        }
        Ok(vals)
    };
    let n_layers = uint("n_layers")?;
    let (h_x, h_y) = (list("h_x", n_layers)?, list("h_y", n_layers)?);
    let (m, beta) = (list("m_mlp", n_layers)?, list("beta_mlp", n_layers)?);
    let (gamma, alpha) = (list("gamma_mlp", n_layers)?, list("plain_alpha", n_layers)?);
    let layers = (0..n_layers)
        .map(|l| LayerScalars {
            h_x: h_x[l],
            h_y: h_y[l],
            m_mlp: m[l],
            beta_mlp: beta[l],
            gamma_mlp: gamma[l],
            plain_alpha: alpha[l],
        })
        .collect();
    let method = SympMethod::from_name(get("method")?).ok_or_else(|| Error::Format("unknown method".into()))?;
    let attention =
        AttentionKind::from_name(get("attention")?).ok_or_else(|| Error::Format("unknown attention kind".into()))?;
    let causal = get("causal")?
        .parse()
        .map_err(|_| Error::Format("header `causal` must be true or false".into()))?;
    let cfg = SympFormerConfig {
        n_layers,
        n_heads: uint("n_heads")?,
        d_model: uint("d_model")?,
        block_size: uint("block_size")?,
        vocab_size: uint("vocab_size")?,
        layers,
        c_log: real("c_log")?,
        c_lin: real("c_lin")?,
        t0: real("t0")?,
        method,
        attention,
        causal,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn take_matrix(map: &mut HashMap<String, (Vec<usize>, Vec<f64>)>, name: &str) -> Result<Matrix> {
    match map.remove(name) {
        Some((dims, data)) if dims.len() == 2 => Ok(Matrix::from_row_slice(dims[0], dims[1], &data)),
        Some((dims, _)) => Err(Error::Format(format!("tensor `{name}` has rank {}, expected 2", dims.len()))),
        None => Err(Error::Format(format!("missing tensor `{name}`"))),
    }
}

fn take_vector(map: &mut HashMap<String, (Vec<usize>, Vec<f64>)>, name: &str) -> Result<Vector> {
    match map.remove(name) {
        Some((dims, data)) if dims.len() == 1 => Ok(Vector::from_vec(data)),
        Some((dims, _)) => Err(Error::Format(format!("tensor `{name}` has rank {}, expected 1", dims.len()))),
        None => Err(Error::Format(format!("missing tensor `{name}`"))),
    }
}

pub fn read_weights<R: BufRead>(r: &mut R) -> Result<(SympFormerConfig, SympFormerWeights)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != WEIGHTS_MAGIC {
        return Err(Error::Format("not a weights file (bad magic line)".into()));
    }
    let mut head = BTreeMap::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("header is not terminated by `end_header`".into()));
        }
        let text = line.trim_end();
        if text == "end_header" {
            break;
        }
        let (k, v) = text
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed header line `{text}`")))?;
        head.insert(k.trim().to_string(), v.trim().to_string());
    }
    let cfg = parse_header(&head)?;

    let count = get_u32(r)?;
    let mut map = HashMap::with_capacity(count);
    for _ in 0..count {
        let len = get_u32(r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| Error::Format(format!("truncated tensor name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = get_u32(r)?;
        if rank == 0 || rank > 2 {
            return Err(Error::Format(format!("tensor `{name}` has unsupported rank {rank}")));
        }
        let dims = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let size = dims.iter().product::<usize>();
        let data = (0..size).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
        if map.insert(name.clone(), (dims, data)).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
    }
    if !r.fill_buf()?.is_empty() {
        return Err(Error::Format("trailing bytes after the last tensor".into()));
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let heads = (0..cfg.n_heads)
            .map(|h| {
                Ok(HeadWeights {
                    q: take_matrix(&mut map, &format!("layers.{l}.heads.{h}.q"))?,
                    k: take_matrix(&mut map, &format!("layers.{l}.heads.{h}.k"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        layers.push(LayerWeights {
            heads,
            value: take_matrix(&mut map, &format!("layers.{l}.value"))?,
            w_in: take_matrix(&mut map, &format!("layers.{l}.mlp.w_in"))?,
            w_out: take_matrix(&mut map, &format!("layers.{l}.mlp.w_out"))?,
            ln_gain: take_vector(&mut map, &format!("layers.{l}.ln.gain"))?,
            ln_y_gain: take_vector(&mut map, &format!("layers.{l}.ln_y.gain"))?,
            ln_v_gain: take_vector(&mut map, &format!("layers.{l}.ln_v.gain"))?,
        });
    }
    let w = SympFormerWeights {
        tok_emb: take_matrix(&mut map, "tok_emb")?,
        pos_emb: take_matrix(&mut map, "pos_emb")?,
        ln_f_gain: take_vector(&mut map, "ln_f.gain")?,
        lm_head: take_matrix(&mut map, "lm_head")?,
        layers,
    };
    if let Some(extra) = map.keys().min() {
        return Err(Error::Format(format!("unexpected tensor `{extra}`")));
    }
    w.check_shapes(&cfg)?;
    Ok((cfg, w))
}

/// One sequence of whitespace-separated token ids per non-empty line.
pub fn parse_tokens(text: &str) -> Result<Vec<Vec<usize>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|tok| {
                    tok.parse()
                        .map_err(|_| Error::Format(format!("line {}: `{tok}` is not a token id", i + 1)))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_round_trip_bit_exact() {
        let mut cfg = SympFormerConfig::new(2, 2, 4, 3, 7).unwrap();
        cfg.layers[1].h_x = 0.123_456_789_012_345_6;
        cfg.method = SympMethod::ConformalEuler;
        cfg.attention = AttentionKind::Linear;
        cfg.causal = false;
        let w = SympFormerWeights::random(&cfg, 5).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &cfg, &w).unwrap();
        let (cfg2, w2) = read_weights(&mut buf.as_slice()).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(w, w2);
    }

    #[test]
    fn corrupt_files_rejected() {
        let cfg = SympFormerConfig::new(1, 1, 2, 2, 3).unwrap();
        let w = SympFormerWeights::random(&cfg, 0).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &cfg, &w).unwrap();
        assert!(read_weights(&mut &buf[..buf.len() - 3]).is_err());
        assert!(read_weights(&mut &b"nope\n"[..]).is_err());
        let text = String::from_utf8_lossy(&buf).replace("d_model = 2", "d_model = 3");
        assert!(read_weights(&mut text.as_bytes()).is_err());
    }

    #[test]
    fn token_lines() {
        assert_eq!(parse_tokens("1 2 3\n\n 4  5\n").unwrap(), vec![vec![1, 2, 3], vec![4, 5]]);
        let err = parse_tokens("1 2\n3 x\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
