//! Binary checkpoint format for whole models.
//!
//! Layout (all integers little-endian):
//!   magic   6 bytes  b"GCVK1\0"
//!   kind    u8       0 = vae, 1 = vae-roc, 2 = gcvae
//!   dkind   u8       0 = diag, 1 = rank-one, 2 = mixed-diag, 3 = mixed-copula
//!   latent  u32
//!   ncols   u32      then per column:
//!     role  u8       0 = continuous, 1 = categorical
//!     card  u32      cardinality (0 for continuous)
//!     nlen  u16 + utf8 column name
//!   norm    u8       1 if normalization stats follow (f64 mean, f64 std per
//!                    continuous column in column order), else 0
//!   nets    u32      network count, then that many MLP blobs (see nn module)
//!                    in parameter-flattening order.

use std::path::Path;

use crate::data::{Column, NormStat, Role, Schema};
use crate::nn::{read_mlp, read_f64, read_u32, CodecError, Mlp};

use super::{Decoder, DecoderKind, Encoder, Model, ModelKind};

const MAGIC: &[u8; 6] = b"GCVK1\0";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("network blob: {0}")]
    Codec(#[from] CodecError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(match model.kind {
        ModelKind::Vae => 0,
        ModelKind::VaeRoc => 1,
        ModelKind::Gcvae => 2,
    });
    out.push(model.decoder.kind.tag());
    out.extend_from_slice(&(model.latent_dim as u32).to_le_bytes());

    out.extend_from_slice(&(model.schema.columns.len() as u32).to_le_bytes());
    for col in &model.schema.columns {
        match col.role {
            Role::Continuous => {
                out.push(0);
                out.extend_from_slice(&0u32.to_le_bytes());
            }
            Role::Categorical(j) => {
                out.push(1);
                out.extend_from_slice(&(j as u32).to_le_bytes());
            }
        }
        let name = col.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
    }
    match &model.schema.normalization {
        Some(stats) => {
            out.push(1);
            for s in stats {
                out.extend_from_slice(&s.mean.to_le_bytes());
                out.extend_from_slice(&s.std.to_le_bytes());
            }
        }
        None => out.push(0),
    }

    let mut nets: Vec<&Mlp> = Vec::new();
    collect_nets(model, &mut nets);
    out.extend_from_slice(&(nets.len() as u32).to_le_bytes());
    for net in nets {
        crate::nn::write_mlp(net, &mut out);
    }
    out
}

pub fn from_bytes(buf: &[u8]) -> Result<Model, CheckpointError> {
    let mut cur = 0usize;
    let magic = buf.get(..6).ok_or(CheckpointError::BadMagic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    cur += 6;
    let kind = match take_u8(buf, &mut cur)? {
        0 => ModelKind::Vae,
        1 => ModelKind::VaeRoc,
        2 => ModelKind::Gcvae,
        t => return Err(CheckpointError::Corrupt(format!("model kind {t}"))),
    };
    let dkind = match take_u8(buf, &mut cur)? {
        0 => DecoderKind::Diag,
        1 => DecoderKind::RankOne,
        2 => DecoderKind::MixedDiag,
        3 => DecoderKind::MixedCopula,
        t => return Err(CheckpointError::Corrupt(format!("decoder kind {t}"))),
    };
    let latent_dim = read_u32(buf, &mut cur)? as usize;

    let ncols = read_u32(buf, &mut cur)? as usize;
    if ncols > 1_000_000 {
        return Err(CheckpointError::Corrupt("absurd column count".into()));
    }
    let mut columns = Vec::with_capacity(ncols);
    for _ in 0..ncols {
        let role = take_u8(buf, &mut cur)?;
        let card = read_u32(buf, &mut cur)? as usize;
        let nlen = take_u16(buf, &mut cur)? as usize;
        let name_bytes = buf
            .get(cur..cur + nlen)
            .ok_or_else(|| CheckpointError::Corrupt("truncated column name".into()))?;
        cur += nlen;
        let name = String::from_utf8(name_bytes.to_vec())
            .map_err(|_| CheckpointError::Corrupt("column name not utf8".into()))?;
        let role = match role {
            0 => Role::Continuous,
            1 => Role::Categorical(card),
            t => return Err(CheckpointError::Corrupt(format!("column role {t}"))),
        };
        columns.push(Column { name, role });
    }
    let mut schema = Schema {
        columns,
        normalization: None,
    };
    if take_u8(buf, &mut cur)? == 1 {
        let mut stats = Vec::with_capacity(schema.cont_dim());
        for _ in 0..schema.cont_dim() {
            let mean = read_f64(buf, &mut cur)?;
            let std = read_f64(buf, &mut cur)?;
            if !mean.is_finite() || !std.is_finite() || std <= 0.0 {
                return Err(CheckpointError::Corrupt("bad normalization stats".into()));
            }
            stats.push(NormStat { mean, std });
        }
        schema.normalization = Some(stats);
    }

    let n_nets = read_u32(buf, &mut cur)? as usize;
    let mut nets = Vec::with_capacity(n_nets);
    for _ in 0..n_nets {
        nets.push(read_mlp(buf, &mut cur)?);
    }
    if cur != buf.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    let mut nets = std::collections::VecDeque::from(nets);
    fn next(
        nets: &mut std::collections::VecDeque<Mlp>,
        what: &str,
    ) -> Result<Mlp, CheckpointError> {
        nets.pop_front()
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing network: {what}")))
    }

    let encoder = Encoder {
        trunk: next(&mut nets, "encoder trunk")?,
        eta_head: next(&mut nets, "eta head")?,
        log_tau2_head: next(&mut nets, "log-tau2 head")?,
    };
    let cont_dim = schema.cont_dim();
    let cards = schema.cat_cards();
    let logits: usize = cards.iter().sum();
    let total = cont_dim + cards.len();
    let (mu_d, sig_d, beta_d, omega, a_d) = match dkind {
        DecoderKind::Diag => (cont_dim, cont_dim, 0, false, 0),
        DecoderKind::RankOne => (cont_dim, 0, 0, true, cont_dim),
        DecoderKind::MixedDiag => (cont_dim, cont_dim, logits, false, 0),
        DecoderKind::MixedCopula => (cont_dim, cont_dim, logits, true, total),
    };
    fn opt(
        nets: &mut std::collections::VecDeque<Mlp>,
        dim: usize,
        what: &str,
    ) -> Result<Option<Mlp>, CheckpointError> {
        if dim == 0 {
            return Ok(None);
        }
        let net = next(nets, what)?;
        if net.out_dim() != dim {
            return Err(CheckpointError::Corrupt(format!(
                "{what}: expected {dim} outputs, found {}",
                net.out_dim()
            )));
        }
        Ok(Some(net))
    }
    let decoder = Decoder {
        kind: dkind,
        cont_dim,
        cards: cards.clone(),
        trunk: next(&mut nets, "decoder trunk")?,
        mu_head: opt(&mut nets, mu_d, "mu head")?,
        log_sigma2_head: opt(&mut nets, sig_d, "log-sigma2 head")?,
        beta_head: opt(&mut nets, beta_d, "beta head")?,
        log_omega_head: if omega {
            opt(&mut nets, 1, "log-omega head")?
        } else {
            None
        },
        a_head: opt(&mut nets, a_d, "a head")?,
    };
    if encoder.trunk.in_dim() != schema.input_dim() {
        return Err(CheckpointError::Corrupt(
            "encoder input does not match schema".into(),
        ));
    }
    if decoder.trunk.in_dim() != latent_dim || encoder.eta_head.out_dim() != latent_dim {
        return Err(CheckpointError::Corrupt("latent dimension mismatch".into()));
    }
    Ok(Model {
        kind,
        encoder,
        decoder,
        schema,
        latent_dim,
    })
}

pub fn save(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model, CheckpointError> {
    from_bytes(&std::fs::read(path)?)
}

fn collect_nets<'a>(model: &'a Model, out: &mut Vec<&'a Mlp>) {
    out.push(&model.encoder.trunk);
    out.push(&model.encoder.eta_head);
    out.push(&model.encoder.log_tau2_head);
    out.push(&model.decoder.trunk);
    for net in [
        &model.decoder.mu_head,
        &model.decoder.log_sigma2_head,
        &model.decoder.beta_head,
        &model.decoder.log_omega_head,
        &model.decoder.a_head,
    ]
    .into_iter()
    .flatten()
    {
        out.push(net);
    }
}

fn take_u8(buf: &[u8], cur: &mut usize) -> Result<u8, CheckpointError> {
    let b = *buf
        .get(*cur)
        .ok_or_else(|| CheckpointError::Corrupt("truncated".into()))?;
    *cur += 1;
    Ok(b)
}

fn take_u16(buf: &[u8], cur: &mut usize) -> Result<u16, CheckpointError> {
    let b = buf
        .get(*cur..*cur + 2)
        .ok_or_else(|| CheckpointError::Corrupt("truncated".into()))?;
    *cur += 2;
    Ok(u16::from_le_bytes(b.try_into().unwrap()))
}
