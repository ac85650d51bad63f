//! TIES: trim → elect sign → disjoint mean.
//!
//! Trim keeps, per tensor, the `k = ⌈density·n⌉` largest-magnitude
//! elements and zeroes the rest; magnitude ties at the threshold are
//! broken by keeping the lower flat index. Merging trims each ω-scaled
//! vector, elects a per-element sign from the sum of the trimmed values,
//! and averages only the contributions agreeing with that sign.

use std::path::Path;

use rayon::prelude::*;

use crate::container::{Checkpoint, DType, PlannedWriter, ROLE_KEY, ROLE_TASK_VECTOR};
use crate::error::{Error, Result};
use crate::merge::{TaskVector, WeightedVector};

const PAR_CHUNK: usize = 1 << 16;

/// Reject densities outside (0, 1].
pub fn validate_density(density: f64) -> Result<()> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidInput {
            detail: format!("ties density must be in (0, 1], got {density}"),
        });
    }
    Ok(())
}

/// Number of elements trim keeps for a tensor of `n` elements.
pub fn trim_keep_count(density: f64, n: usize) -> usize {
    ((density * n as f64).ceil() as usize).min(n)
}

/// Zero all but the `⌈density·n⌉` largest-magnitude elements in place.
pub fn ties_trim_in_place(values: &mut [f32], density: f64) -> Result<()> {
    validate_density(density)?;
    let n = values.len();
    if n == 0 {
        return Ok(());
    }
    if n > u32::MAX as usize {
        return Err(Error::InvalidInput {
            detail: format!("tensor of {n} elements exceeds the trim index limit"),
        });
    }
    let k = trim_keep_count(density, n);
    if k == n {
        return Ok(());
    }

    let mut order: Vec<u32> = (0..n as u32).collect();
    let rank = |i: u32, j: u32| {
        let (a, b) = (values[i as usize].abs(), values[j as usize].abs());
        b.total_cmp(&a).then(i.cmp(&j))
    };
    order.select_nth_unstable_by(k - 1, |&i, &j| rank(i, j));
    let kept: Vec<(u32, f32)> = order[..k]
        .iter()
        .map(|&i| (i, values[i as usize]))
        .collect();
    values.par_chunks_mut(PAR_CHUNK).for_each(|c| c.fill(0.0));
    for (i, v) in kept {
        values[i as usize] = v;
    }
    Ok(())
}

/// Trim each buffer, then combine elementwise: elect the sign of the sum
/// of trimmed values (zero sum → 0) and average the contributions whose
/// sign agrees, accumulating in f64 and narrowing once.
pub fn ties_merge_buffers(bufs: &mut [Vec<f32>], density: f64) -> Result<Vec<f32>> {
    validate_density(density)?;
    let Some(first) = bufs.first() else {
        return Err(Error::InvalidInput {
            detail: "ties merge needs at least one vector".into(),
        });
    };
    let n = first.len();
    if bufs.iter().any(|b| b.len() != n) {
        return Err(Error::InvalidInput {
            detail: "ties merge buffers have differing lengths".into(),
        });
    }
    for buf in bufs.iter_mut() {
        ties_trim_in_place(buf, density)?;
    }
    let bufs = &*bufs;
    let mut out = vec![0.0f32; n];
    out.par_chunks_mut(PAR_CHUNK)
        .enumerate()
        .for_each(|(ci, chunk)| {
            let base = ci * PAR_CHUNK;
            for (j, slot) in chunk.iter_mut().enumerate() {
                let idx = base + j;
                let mut sum = 0.0f64;
                for buf in bufs {
                    sum += buf[idx] as f64;
                }
                if sum == 0.0 {
                    *slot = 0.0;
                    continue;
                }
                let positive = sum > 0.0;
                let mut acc = 0.0f64;
                let mut count = 0u32;
                for buf in bufs {
                    let v = buf[idx];
                    if (positive && v > 0.0) || (!positive && v < 0.0) {
                        acc += v as f64;
                        count += 1;
                    }
                }
                *slot = (acc / count as f64) as f32;
            }
        });
    Ok(out)
}

fn vector_layout(cp: &Checkpoint) -> Vec<(String, DType, Vec<u64>)> {
    cp.manifest()
        .records()
        .iter()
        .filter(|r| r.dtype.is_arithmetic())
        .map(|r| (r.name.clone(), DType::F32, r.shape.clone()))
        .collect()
}

/// Trim a stored task vector into a new container at `out_path`.
///
/// The output records its own parameters under `sparsify.ties.*` metadata.
pub fn ties_trim(vector: &TaskVector, density: f64, out_path: &Path) -> Result<TaskVector> {
    validate_density(density)?;
    let cp = vector.checkpoint();
    let layout = vector_layout(cp);
    let mut metadata = cp.manifest().metadata().clone();
    metadata.insert(ROLE_KEY.into(), ROLE_TASK_VECTOR.into());
    metadata.insert(
        "sparsify.ties.density".into(),
        serde_json::to_string(&density).expect("json"),
    );
    let mut writer = PlannedWriter::create(out_path, &layout, metadata)?;
    for (name, _, _) in &layout {
        let mut vals = cp.read_f32(name)?;
        ties_trim_in_place(&mut vals, density)?;
        writer.write_f32(name, &vals)?;
    }
    writer.finish()?;
    TaskVector::open(out_path)
}

/// Merge several weighted task vectors with TIES into a single vector.
///
/// All inputs must carry the same float tensors with matching shapes;
/// weights are applied before trimming.
pub fn ties_merge(
    vectors: &[WeightedVector],
    density: f64,
    out_path: &Path,
) -> Result<TaskVector> {
    validate_density(density)?;
    let Some(first) = vectors.first() else {
        return Err(Error::InvalidInput {
            detail: "ties merge needs at least one vector".into(),
        });
    };
    let first_cp = first.vector.checkpoint();
    let layout = vector_layout(first_cp);
    for wv in &vectors[1..] {
        let cp = wv.vector.checkpoint();
        for (name, _, shape) in &layout {
            match cp.manifest().get(name) {
                Some(r) if r.shape == *shape && r.dtype.is_arithmetic() => {}
                Some(r) => {
                    return Err(Error::Incompatible {
                        context: cp.path().display().to_string(),
                        detail: format!(
                            "tensor {name:?} has dtype {} shape {:?}, expected shape {shape:?}",
                            r.dtype, r.shape
                        ),
                    })
                }
                None => {
                    return Err(Error::Incompatible {
                        context: cp.path().display().to_string(),
                        detail: format!("tensor {name:?} is missing"),
                    })
                }
            }
        }
        if cp.manifest().records().iter().filter(|r| r.dtype.is_arithmetic()).count()
            != layout.len()
        {
            return Err(Error::Incompatible {
                context: cp.path().display().to_string(),
                detail: "vector carries tensors absent from the first input".into(),
            });
        }
    }

    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert(ROLE_KEY.to_string(), ROLE_TASK_VECTOR.to_string());
    metadata.insert(
        "sparsify.ties.density".into(),
        serde_json::to_string(&density).expect("json"),
    );
    metadata.insert("sparsify.ties.elect_mode".into(), "mass".into());
    let mut writer = PlannedWriter::create(out_path, &layout, metadata)?;
    for (name, _, _) in &layout {
        let mut bufs = Vec::with_capacity(vectors.len());
        for wv in vectors {
            let mut vals = wv.vector.checkpoint().read_f32(name)?;
            crate::merge::scale_in_place(&mut vals, wv.omega as f32);
            bufs.push(vals);
        }
        let merged = ties_merge_buffers(&mut bufs, density)?;
        drop(bufs);
        writer.write_f32(name, &merged)?;
    }
    writer.finish()?;
    TaskVector::open(out_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::{write_checkpoint, TensorValues};
    use crate::rng::CounterRng;

    #[test]
    fn trim_keeps_top_two_by_magnitude() {
        let mut v = vec![3.0, -1.0, 2.0, 0.0];
        ties_trim_in_place(&mut v, 0.5).unwrap();
        assert_eq!(v, [3.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn trim_density_one_is_identity() {
        let orig = vec![0.1f32, -0.0, f32::MIN_POSITIVE, -3.5];
        let mut v = orig.clone();
        ties_trim_in_place(&mut v, 1.0).unwrap();
        for (a, b) in v.iter().zip(&orig) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn trim_breaks_magnitude_ties_by_lower_index() {
        let mut v = vec![1.0, -1.0, 1.0, -1.0];
        ties_trim_in_place(&mut v, 0.5).unwrap();
        assert_eq!(v, [1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn trim_matches_full_sort_oracle() {
        let rng = CounterRng::new(3, "trim-oracle");
        let vals: Vec<f32> = (0..1000).map(|i| rng.uniform(i) as f32 - 0.5).collect();

        let mut want = vec![0.0f32; 1000];
        let mut order: Vec<usize> = (0..1000).collect();
        order.sort_by(|&i, &j| vals[j].abs().total_cmp(&vals[i].abs()).then(i.cmp(&j)));
        for &i in &order[..200] {
            want[i] = vals[i];
        }

        let mut got = vals.clone();
        ties_trim_in_place(&mut got, 0.2).unwrap();
        assert_eq!(got.iter().filter(|v| **v != 0.0).count(), 200);
        for i in 0..1000 {
            assert_eq!(got[i].to_bits(), want[i].to_bits(), "element {i}");
        }
    }

    #[test]
    fn trim_keep_count_rounds_up() {
        assert_eq!(trim_keep_count(0.25, 10), 3);
        assert_eq!(trim_keep_count(0.2, 1000), 200);
        assert_eq!(trim_keep_count(1.0, 7), 7);
        assert_eq!(trim_keep_count(0.5, 4), 2);
    }

    #[test]
    fn trim_rejects_bad_density() {
        for d in [0.0, -0.5, 1.0001, f64::NAN, f64::INFINITY] {
            assert!(ties_trim_in_place(&mut [1.0f32], d).is_err(), "density {d}");
        }
    }

    #[test]
    fn merge_elects_majority_mass_sign() {
        let mut bufs = vec![vec![2.0f32], vec![-1.0f32]];
        assert_eq!(ties_merge_buffers(&mut bufs, 1.0).unwrap(), [2.0]);

        let mut bufs = vec![vec![1.0f32], vec![1.0f32], vec![-5.0f32]];
        assert_eq!(ties_merge_buffers(&mut bufs, 1.0).unwrap(), [-5.0]);
    }

    #[test]
    fn merge_zero_sum_yields_zero() {
        let mut bufs = vec![vec![1.0f32, 0.0], vec![-1.0f32, 0.0]];
        assert_eq!(ties_merge_buffers(&mut bufs, 1.0).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn merge_single_vector_full_density_is_identity() {
        let rng = CounterRng::new(9, "single");
        let vals: Vec<f32> = (0..257).map(|i| rng.uniform(i) as f32 - 0.5).collect();
        let mut bufs = vec![vals.clone()];
        let out = ties_merge_buffers(&mut bufs, 1.0).unwrap();
        for (a, b) in out.iter().zip(&vals) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn merge_averages_agreeing_signs() {
        let mut bufs = vec![vec![3.0f32, 4.0], vec![-1.0f32, 2.0]];
        // Element 0: sum 2 → +, mean{3} = 3. Element 1: sum 6 → +, mean{4,2} = 3.
        assert_eq!(ties_merge_buffers(&mut bufs, 1.0).unwrap(), [3.0, 3.0]);
    }

    #[test]
    fn trim_never_increases_magnitude() {
        let rng = CounterRng::new(4, "mag");
        let vals: Vec<f32> = (0..500).map(|i| rng.uniform(i) as f32 * 2.0 - 1.0).collect();
        let mut got = vals.clone();
        ties_trim_in_place(&mut got, 0.33).unwrap();
        for i in 0..500 {
            assert!(got[i].abs() <= vals[i].abs());
            if got[i] != 0.0 {
                assert_eq!(got[i].to_bits(), vals[i].to_bits());
            }
        }
    }

    #[test]
    fn file_level_trim_and_merge() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |name: &str, vals: Vec<f32>| {
            let p = dir.path().join(name);
            let n = vals.len() as u64;
            write_checkpoint(
                &p,
                vec![("w".to_string(), DType::F32, vec![n], TensorValues::F32(vals))],
                [(ROLE_KEY.to_string(), ROLE_TASK_VECTOR.to_string())]
                    .into_iter()
                    .collect(),
            )
            .unwrap();
            TaskVector::open(&p).unwrap()
        };
        let v = mk("v.st", vec![3.0, -1.0, 2.0, 0.0]);
        let trimmed = ties_trim(&v, 0.5, &dir.path().join("t.st")).unwrap();
        assert_eq!(
            trimmed.checkpoint().read_f32("w").unwrap(),
            [3.0, 0.0, 2.0, 0.0]
        );
        assert_eq!(
            trimmed
                .checkpoint()
                .manifest()
                .metadata()
                .get("sparsify.ties.density")
                .unwrap(),
            "0.5"
        );

        let a = mk("a.st", vec![4.0]);
        let b = mk("b.st", vec![1.0]);
        let merged = ties_merge(
            &[
                WeightedVector { vector: a, omega: 0.5 },
                WeightedVector { vector: b, omega: 1.0 },
            ],
            1.0,
            &dir.path().join("m.st"),
        )
        .unwrap();
        // Scaled values {2, 1} agree on +: mean 1.5.
        assert_eq!(merged.checkpoint().read_f32("w").unwrap(), [1.5]);
        assert_eq!(merged.checkpoint().manifest().role(), ROLE_TASK_VECTOR);
    }
}
