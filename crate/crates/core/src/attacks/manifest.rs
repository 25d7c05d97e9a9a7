//! Plain-text attack manifest: one attack per line,
//!
//! ```text
//! # comment
//! A<id> [key=value ...]
//! ```
//!
//! `id` selects the battery entry and its defaults; keys override them.
//! Keys per kind: JPEG `quality`; median `size`; Gaussian `sigma`; affine
//! `matrix=a,b,c,d`; noise `sigma`, `seed`; rescale `factor`; rotation
//! `degrees`; quarter turn `turns`; crop `keep`.

use super::{AttackKind, AttackSpec, Affine2};
use crate::error::{Error, Result};
use std::str::FromStr;

fn parse_num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Usage(format!("manifest line {line}: bad value for {key}: {v:?}")))
}

fn parse_line(lineno: usize, line: &str) -> Result<AttackSpec> {
    let mut tokens = line.split_whitespace();
    let head = tokens.next().expect("caller skips blank lines");
    let id: u8 = head
        .strip_prefix(['A', 'a'])
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::Usage(format!("manifest line {lineno}: expected A<id>, got {head:?}")))?;
    let mut spec = AttackSpec::standard(id)
        .map_err(|e| Error::Usage(format!("manifest line {lineno}: {e}")))?;
    for tok in tokens {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("manifest line {lineno}: expected key=value, got {tok:?}")))?;
        let l = lineno;
        match (&mut spec.kind, key) {
            (AttackKind::Jpeg { quality }, "quality") => *quality = parse_num(l, key, val)?,
            (AttackKind::Median { size }, "size") => *size = parse_num(l, key, val)?,
            (AttackKind::Gaussian { sigma }, "sigma") => *sigma = parse_num(l, key, val)?,
            (AttackKind::Noise { sigma, .. }, "sigma") => *sigma = parse_num(l, key, val)?,
            (AttackKind::Noise { seed, .. }, "seed") => *seed = parse_num(l, key, val)?,
            (AttackKind::Rescale { factor }, "factor") => *factor = parse_num(l, key, val)?,
            (AttackKind::Rotate { degrees }, "degrees") => *degrees = parse_num(l, key, val)?,
            (AttackKind::QuarterTurn { turns }, "turns") => *turns = parse_num(l, key, val)?,
            (AttackKind::Crop { keep }, "keep") => *keep = parse_num(l, key, val)?,
            (AttackKind::Affine { matrix }, "matrix") => {
                let v: Vec<f64> = val
                    .split(',')
                    .map(|x| parse_num(l, key, x))
                    .collect::<Result<_>>()?;
                let [a, b, c, d] = v[..] else {
                    return Err(Error::Usage(format!("manifest line {l}: matrix needs 4 entries")));
                };
                *matrix = Affine2::new(a, b, c, d);
            }
            _ => {
                return Err(Error::Usage(format!(
                    "manifest line {l}: {} does not take {key:?}",
                    spec.label()
                )))
            }
        }
    }
    validate(&spec).map_err(|e| Error::Usage(format!("manifest line {lineno}: {e}")))?;
    Ok(spec)
}

fn validate(spec: &AttackSpec) -> std::result::Result<(), String> {
    match &spec.kind {
        AttackKind::Jpeg { quality } if !(1..=100).contains(quality) => Err("quality must be 1..=100".into()),
        AttackKind::Median { size } if size % 2 == 0 => Err("median size must be odd".into()),
        AttackKind::Gaussian { sigma } | AttackKind::Noise { sigma, .. } if !(*sigma > 0.0) => {
            Err("sigma must be positive".into())
        }
        AttackKind::Rescale { factor } if !(*factor > 0.0) => Err("factor must be positive".into()),
        AttackKind::Crop { keep } if !(*keep > 0.0 && *keep <= 1.0) => Err("keep must be in (0, 1]".into()),
        AttackKind::Affine { matrix } if matrix.inverse().is_none() => Err("singular matrix".into()),
        _ => Ok(()),
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<AttackSpec>> {
    let mut out = vec![];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_line(i + 1, line)?);
    }
    if out.is_empty() {
        return Err(Error::Usage("attack manifest lists no attacks".into()));
    }
    Ok(out)
}

pub fn write_manifest(specs: &[AttackSpec]) -> String {
    specs.iter().map(|s| format!("{s}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let text = "# battery\nA1\nA2 quality=75\n\nA12 sigma=0.01 seed=3  # noisy\na15\n";
        let specs = parse_manifest(text).unwrap();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[1].kind, AttackKind::Jpeg { quality: 75 });
        assert_eq!(specs[2].kind, AttackKind::Noise { sigma: 0.01, seed: 3 });
        assert_eq!(specs[3], AttackSpec::standard(15).unwrap());
    }

    #[test]
    fn display_round_trips() {
        let all = AttackSpec::battery();
        assert_eq!(parse_manifest(&write_manifest(&all)).unwrap(), all);
    }

    #[test]
    fn errors_name_the_line() {
        for bad in ["A17", "B2", "A2 quality", "A2 sigma=1", "A2 quality=0", "A6 matrix=1,2,2,4", "A4 size=2"] {
            let err = parse_manifest(&format!("A1\n{bad}")).unwrap_err();
            assert!(err.to_string().contains("line 2"), "{bad}: {err}");
        }
        assert!(parse_manifest("# nothing\n").is_err());
    }
}
