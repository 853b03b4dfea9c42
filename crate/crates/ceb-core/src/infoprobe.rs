//! Exact information-theoretic oracle on small discrete joints.
//!
//! A [`DiscreteJoint`] is a table p(x, y) plus a channel p(z|x), which fixes
//! the Markov structure: Z depends on X alone, so Z and Y are independent
//! given X. Everything is computed by exhaustive summation in nats, which
//! makes this module an independent check on the variational training
//! objectives: the chain rule `I(Z;X) = I(Z;Y) + I(Z;X|Y)` holds exactly
//! here, the class-conditional bound is tight at the true conditional
//! marginal, and the unconditional bound exceeds it by exactly I(Z;Y).
//!
//! Alphabet sizes are capped at 64 per variable so the triple loops stay
//! sub-second; build several smaller joints instead of one larger one.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MAX_ALPHABET: usize = 64;

/// p(x, y) with a channel p(z|x).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    nx: usize,
    ny: usize,
    nz: usize,
    /// `[nx, ny]` row-major, sums to 1.
    p_xy: Vec<f64>,
    /// `[nx, nz]` row-major, each row sums to 1.
    channel: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiPair {
    ZX,
    ZY,
}

/// Exact bound values against the true residual information.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundGap {
    /// E[log p(z|x) − log q(z|y)], an upper bound on the residual.
    pub ceb_bound: f64,
    /// E[log p(z|x) − log q(z)], the looser unconditional bound.
    pub vib_bound: f64,
    /// I(Z;X|Y).
    pub true_residual: f64,
}

fn xlogy_ratio(p: f64, num: f64, den: f64) -> f64 {
    // p * ln(num/den) with 0 * ln(0) treated as 0
    if p <= 0.0 {
        0.0
    } else {
        p * (num / den).ln()
    }
}

impl DiscreteJoint {
    pub fn new(
        nx: usize,
        ny: usize,
        nz: usize,
        p_xy: Vec<f64>,
        channel: Vec<f64>,
    ) -> Result<DiscreteJoint> {
        for (var, size) in [("X", nx), ("Y", ny), ("Z", nz)] {
            if size == 0 {
                return Err(Error::InvalidJoint(format!("alphabet of {var} is empty")));
            }
            if size > MAX_ALPHABET {
                return Err(Error::AlphabetTooLarge {
                    var: match var {
                        "X" => "X",
                        "Y" => "Y",
                        _ => "Z",
                    },
                    size,
                    max: MAX_ALPHABET,
                });
            }
        }
        if p_xy.len() != nx * ny {
            return Err(Error::InvalidJoint(format!(
                "p_xy has {} entries, expected {}",
                p_xy.len(),
                nx * ny
            )));
        }
        if channel.len() != nx * nz {
            return Err(Error::InvalidJoint(format!(
                "channel has {} entries, expected {}",
                channel.len(),
                nx * nz
            )));
        }
        if p_xy.iter().any(|p| *p < 0.0) || channel.iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidJoint("negative probability".into()));
        }
        let total: f64 = p_xy.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidJoint(format!("p_xy sums to {total}")));
        }
        for x in 0..nx {
            let row: f64 = channel[x * nz..(x + 1) * nz].iter().sum();
            if (row - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidJoint(format!(
                    "channel row {x} sums to {row}"
                )));
            }
        }
        Ok(DiscreteJoint {
            nx,
            ny,
            nz,
            p_xy,
            channel,
        })
    }

    /// Random joint with smoothed positive entries, for property trials.
    pub fn random<R: Rng>(nx: usize, ny: usize, nz: usize, rng: &mut R) -> Result<DiscreteJoint> {
        let mut p_xy: Vec<f64> = (0..nx * ny).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = p_xy.iter().sum();
        for p in &mut p_xy {
            *p /= total;
        }
        let mut channel = vec![0.0; nx * nz];
        for x in 0..nx {
            let row = &mut channel[x * nz..(x + 1) * nz];
            for v in row.iter_mut() {
                *v = rng.gen::<f64>() + 1e-3;
            }
            let s: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        DiscreteJoint::new(nx, ny, nz, p_xy, channel)
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn p_joint(&self, x: usize, y: usize, z: usize) -> f64 {
        self.p_xy[x * self.ny + y] * self.channel[x * self.nz + z]
    }

    pub fn p_z_given_x(&self, x: usize, z: usize) -> f64 {
        self.channel[x * self.nz + z]
    }

    pub fn p_x(&self) -> Vec<f64> {
        (0..self.nx)
            .map(|x| self.p_xy[x * self.ny..(x + 1) * self.ny].iter().sum())
            .collect()
    }

    pub fn p_y(&self) -> Vec<f64> {
        (0..self.ny)
            .map(|y| (0..self.nx).map(|x| self.p_xy[x * self.ny + y]).sum())
            .collect()
    }

    pub fn p_z(&self) -> Vec<f64> {
        let p_x = self.p_x();
        (0..self.nz)
            .map(|z| {
                (0..self.nx)
                    .map(|x| p_x[x] * self.channel[x * self.nz + z])
                    .sum()
            })
            .collect()
    }

    /// True conditional marginal p(z|y) (rows y, columns z).
    pub fn p_z_given_y(&self) -> Vec<f64> {
        let p_y = self.p_y();
        let mut out = vec![0.0; self.ny * self.nz];
        for y in 0..self.ny {
            if p_y[y] == 0.0 {
                continue;
            }
            for z in 0..self.nz {
                let mut acc = 0.0;
                for x in 0..self.nx {
                    acc += self.p_xy[x * self.ny + y] * self.channel[x * self.nz + z];
                }
                out[y * self.nz + z] = acc / p_y[y];
            }
        }
        out
    }
}

/// Exact mutual information of the requested pair, in nats.
pub fn mutual_information(joint: &DiscreteJoint, pair: MiPair) -> f64 {
    let (nx, ny, nz) = joint.sizes();
    match pair {
        MiPair::ZX => {
            let p_x = joint.p_x();
            let p_z = joint.p_z();
            let mut mi = 0.0;
            for x in 0..nx {
                for z in 0..nz {
                    let p = p_x[x] * joint.p_z_given_x(x, z);
                    mi += xlogy_ratio(p, p, p_x[x] * p_z[z]);
                }
            }
            mi
        }
        MiPair::ZY => {
            let p_y = joint.p_y();
            let p_z = joint.p_z();
            let mut mi = 0.0;
            for y in 0..ny {
                for z in 0..nz {
                    let mut p_yz = 0.0;
                    for x in 0..nx {
                        p_yz += joint.p_joint(x, y, z);
                    }
                    mi += xlogy_ratio(p_yz, p_yz, p_y[y] * p_z[z]);
                }
            }
            mi
        }
    }
}

/// Exact residual information I(Z;X|Y) in nats: the y-weighted mutual
/// information of the per-y slices.
pub fn conditional_mutual_information(joint: &DiscreteJoint) -> f64 {
    let (nx, ny, nz) = joint.sizes();
    let p_y = joint.p_y();
    let p_z_given_y = joint.p_z_given_y();
    let mut cmi = 0.0;
    for y in 0..ny {
        if p_y[y] == 0.0 {
            continue;
        }
        for x in 0..nx {
            let p_x_given_y = joint.p_xy[x * ny + y] / p_y[y];
            for z in 0..nz {
                let p_xz_given_y = p_x_given_y * joint.p_z_given_x(x, z);
                cmi += p_y[y]
                    * xlogy_ratio(
                        p_xz_given_y,
                        p_xz_given_y,
                        p_x_given_y * p_z_given_y[y * nz + z],
                    );
            }
        }
    }
    cmi
}

/// Evaluates both variational upper bounds on the residual information for
/// given q tables: `q_z_given_y` is `[ny, nz]` (rows sum to 1), `q_z` is
/// `[nz]`. Bounds are exact sums; a zero q entry under positive p mass
/// makes the bound +∞, which is reported as such.
pub fn variational_bound_gap(
    joint: &DiscreteJoint,
    q_z_given_y: &[f64],
    q_z: &[f64],
) -> Result<BoundGap> {
    let (nx, ny, nz) = joint.sizes();
    if q_z_given_y.len() != ny * nz {
        return Err(Error::InvalidJoint(format!(
            "q(z|y) has {} entries, expected {}",
            q_z_given_y.len(),
            ny * nz
        )));
    }
    if q_z.len() != nz {
        return Err(Error::InvalidJoint(format!(
            "q(z) has {} entries, expected {nz}",
            q_z.len()
        )));
    }
    for y in 0..ny {
        let row: f64 = q_z_given_y[y * nz..(y + 1) * nz].iter().sum();
        if (row - 1.0).abs() > 1e-9 || q_z_given_y[y * nz..(y + 1) * nz].iter().any(|p| *p < 0.0) {
            return Err(Error::InvalidJoint(format!("q(z|y={y}) row sums to {row}")));
        }
    }
    let qz_total: f64 = q_z.iter().sum();
    if (qz_total - 1.0).abs() > 1e-9 || q_z.iter().any(|p| *p < 0.0) {
        return Err(Error::InvalidJoint(format!("q(z) sums to {qz_total}")));
    }

    let mut ceb_bound = 0.0;
    let mut vib_bound = 0.0;
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let p = joint.p_joint(x, y, z);
                if p == 0.0 {
                    continue;
                }
                let enc = joint.p_z_given_x(x, z);
                let q_cond = q_z_given_y[y * nz + z];
                ceb_bound += if q_cond == 0.0 {
                    f64::INFINITY
                } else {
                    p * (enc / q_cond).ln()
                };
                vib_bound += if q_z[z] == 0.0 {
                    f64::INFINITY
                } else {
                    p * (enc / q_z[z]).ln()
                };
            }
        }
    }
    Ok(BoundGap {
        ceb_bound,
        vib_bound,
        true_residual: conditional_mutual_information(joint),
    })
}
