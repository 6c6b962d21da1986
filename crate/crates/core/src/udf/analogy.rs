//! Analogy objectives (x : y :: q : w) and the exhaustive argmax solver.

use serde::{Deserialize, Serialize};

use crate::ann::{batch_scores, row_norms, take_top};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::parallel::Parallelism;
use crate::udf::vector::{cosine, dot, norm, sub, to_f64};

pub const DEFAULT_EPSILON: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalogyMethod {
    /// cos(w, q + y - x); flag 1.
    CosAdd,
    /// cos(w - q, y - x); flag 2.
    PairDirection,
    /// shifted cos(w,q) * shifted cos(w,y) / (shifted cos(w,x) + epsilon),
    /// with every cosine c mapped to (c + 1) / 2; flag 3.
    CosMul { epsilon: f64 },
}

impl AnalogyMethod {
    pub fn cosmul() -> Self {
        AnalogyMethod::CosMul {
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn from_flag(flag: i64) -> Result<Self> {
        match flag {
            1 => Ok(AnalogyMethod::CosAdd),
            2 => Ok(AnalogyMethod::PairDirection),
            3 => Ok(AnalogyMethod::cosmul()),
            other => Err(Error::InvalidFlag(other)),
        }
    }

    pub fn flag(self) -> i64 {
        match self {
            AnalogyMethod::CosAdd => 1,
            AnalogyMethod::PairDirection => 2,
            AnalogyMethod::CosMul { .. } => 3,
        }
    }
}

fn shifted(c: f64) -> f64 {
    (c + 1.0) / 2.0
}

fn cosmul(cq: f64, cy: f64, cx: f64, epsilon: f64) -> f64 {
    shifted(cq) * shifted(cy) / (shifted(cx) + epsilon)
}

/// Score candidate `w` for the analogy x : y :: q : w.
pub fn analogy_score(
    x: &[f64],
    y: &[f64],
    q: &[f64],
    w: &[f64],
    method: AnalogyMethod,
) -> Result<f64> {
    match method {
        AnalogyMethod::CosMul { epsilon } => {
            if epsilon <= 0.0 {
                return Err(Error::Config("analogy epsilon must be positive".into()));
            }
            Ok(cosmul(cosine(w, q)?, cosine(w, y)?, cosine(w, x)?, epsilon))
        }
        AnalogyMethod::CosAdd => {
            let target: Vec<f64> = q
                .iter()
                .zip(y)
                .zip(x)
                .map(|((q, y), x)| q + y - x)
                .collect();
            cosine(w, &target)
        }
        AnalogyMethod::PairDirection => {
            let dir = sub(y, x);
            let off = sub(w, q);
            if norm(&dir) == 0.0 || norm(&off) == 0.0 {
                return Err(Error::DegenerateDirection);
            }
            cosine(&off, &dir)
        }
    }
}

fn token_vector(model: &EmbeddingModel, token: &str) -> Result<Vec<f64>> {
    model
        .vector(token)
        .map(to_f64)
        .ok_or_else(|| Error::UnknownToken(token.to_string()))
}

/// Best `k` vocabulary tokens for x : y :: q : ?, scored from three batched
/// matrix-vector products. Tokens in `exclude` and zero rows are skipped, as
/// are rows where the objective is undefined (w = q under PAIRDIRECTION).
pub fn solve_analogy_vectors(
    x: &[f64],
    y: &[f64],
    q: &[f64],
    method: AnalogyMethod,
    model: &EmbeddingModel,
    exclude: &[&str],
    k: usize,
    par: Parallelism,
) -> Result<Vec<(String, f64)>> {
    let norms = row_norms(model, par);
    let dx = batch_scores(x, model, par)?;
    let dy = batch_scores(y, model, par)?;
    let dq = batch_scores(q, model, par)?;
    let (nx, ny, nq) = (norm(x), norm(y), norm(q));
    let excluded: Vec<usize> = exclude.iter().filter_map(|t| model.index_of(t)).collect();
    let cos = |d: f64, a: f64, b: f64| (d / (a * b)).clamp(-1.0, 1.0);

    let dir = sub(y, x);
    let (n_dir, q_dir) = (norm(&dir), dot(q, &dir));
    let t: Vec<f64> = q.iter().zip(&dir).map(|(q, d)| q + d).collect();
    let nt = norm(&t);
    match method {
        AnalogyMethod::CosMul { epsilon } if epsilon <= 0.0 => {
            return Err(Error::Config("analogy epsilon must be positive".into()))
        }
        AnalogyMethod::CosMul { .. } if nx == 0.0 || ny == 0.0 || nq == 0.0 => {
            return Err(Error::ZeroVector)
        }
        AnalogyMethod::CosAdd if nt == 0.0 => return Err(Error::ZeroVector),
        AnalogyMethod::PairDirection if n_dir == 0.0 => return Err(Error::DegenerateDirection),
        _ => {}
    }

    let mut scored = Vec::with_capacity(model.len());
    for i in 0..model.len() {
        let n = norms[i];
        if n == 0.0 || excluded.contains(&i) {
            continue;
        }
        let score = match method {
            AnalogyMethod::CosMul { epsilon } => cosmul(
                cos(dq[i], n, nq),
                cos(dy[i], n, ny),
                cos(dx[i], n, nx),
                epsilon,
            ),
            AnalogyMethod::CosAdd => cos(dq[i] + dy[i] - dx[i], n, nt),
            AnalogyMethod::PairDirection => {
                let off2 = n * n + nq * nq - 2.0 * dq[i];
                if off2 <= 1e-24 {
                    continue;
                }
                cos(dy[i] - dx[i] - q_dir, off2.sqrt(), n_dir)
            }
        };
        scored.push((model.word(i).to_string(), score));
    }
    Ok(take_top(scored, k))
}

/// Best `k` answers for the token analogy x : y :: q : ?, excluding x, y, q.
pub fn solve_analogy(
    x: &str,
    y: &str,
    q: &str,
    method: AnalogyMethod,
    model: &EmbeddingModel,
    k: usize,
    par: Parallelism,
) -> Result<Vec<(String, f64)>> {
    let (xv, yv, qv) = (
        token_vector(model, x)?,
        token_vector(model, y)?,
        token_vector(model, q)?,
    );
    solve_analogy_vectors(&xv, &yv, &qv, method, model, &[x, y, q], k, par)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosmul_closed_form() {
        // w = y, q = x: shifted(cos(y,x)) * 1 / (shifted(cos(y,x)) + eps)
        let x = [1.0, 0.0];
        let y = [0.6, 0.8];
        let s = (0.6 + 1.0) / 2.0;
        let got = analogy_score(&x, &y, &x, &y, AnalogyMethod::cosmul()).unwrap();
        assert_abs_diff_eq!(got, s / (s + 0.001), epsilon = 1e-12);
    }

    #[test]
    fn cosadd_cancels_when_x_equals_y() {
        let (x, q, w) = ([0.2, 0.9], [1.0, 0.5], [-0.3, 0.4]);
        let got = analogy_score(&x, &x, &q, &w, AnalogyMethod::CosAdd).unwrap();
        assert_abs_diff_eq!(got, cosine(&w, &q).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn pair_direction_degenerate() {
        let v = [1.0, 2.0];
        let err = analogy_score(
            &v,
            &v,
            &[0.0, 1.0],
            &[1.0, 0.0],
            AnalogyMethod::PairDirection,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateDirection));
        let err = analogy_score(&[1.0, 0.0], &v, &v, &v, AnalogyMethod::PairDirection).unwrap_err();
        assert!(matches!(err, Error::DegenerateDirection));
    }

    #[test]
    fn flags() {
        assert_eq!(AnalogyMethod::from_flag(1).unwrap(), AnalogyMethod::CosAdd);
        assert_eq!(AnalogyMethod::from_flag(3).unwrap().flag(), 3);
        assert!(matches!(
            AnalogyMethod::from_flag(4),
            Err(Error::InvalidFlag(4))
        ));
    }

    #[test]
    fn solver_excludes_inputs() {
        let m = EmbeddingModel::from_vectors(vec![
            ("man", vec![1.0, 0.0, 0.1]),
            ("woman", vec![1.0, 1.0, 0.1]),
            ("king", vec![0.1, 0.0, 1.0]),
            ("queen", vec![0.1, 1.0, 1.0]),
            ("apple", vec![0.0, -1.0, 0.0]),
        ])
        .unwrap();
        for method in [
            AnalogyMethod::CosAdd,
            AnalogyMethod::PairDirection,
            AnalogyMethod::cosmul(),
        ] {
            let top = solve_analogy(
                "man",
                "woman",
                "king",
                method,
                &m,
                1,
                Parallelism::Sequential,
            )
            .unwrap();
            assert_eq!(top[0].0, "queen", "{method:?}");
        }
    }
}
