//! Consensus over repeated clusterings via a co-occurrence matrix and
//! average-linkage agglomeration.

use crate::error::{MagicError, Result};

/// Fraction of runs in which each pair of items shares a cluster.
pub fn co_occurrence(label_sets: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let Some(first) = label_sets.first() else {
        return Err(MagicError::InvalidInput("no label sets".into()));
    };
    let p = first.len();
    if label_sets.iter().any(|s| s.len() != p) {
        return Err(MagicError::InvalidInput(
            "label sets cover different numbers of patients".into(),
        ));
    }
    let r = label_sets.len() as f64;
    let mut co = vec![vec![0.0; p]; p];
    for set in label_sets {
        for i in 0..p {
            for j in i..p {
                if set[i] == set[j] {
                    co[i][j] += 1.0;
                }
            }
        }
    }
    for i in 0..p {
        for j in i..p {
            co[i][j] /= r;
            co[j][i] = co[i][j];
        }
    }
    Ok(co)
}

/// Consensus partition into `c` clusters. Output clusters are numbered by
/// first appearance. A single input run is returned unchanged.
pub fn consensus_from_runs(label_sets: &[Vec<usize>], c: usize) -> Result<Vec<usize>> {
    let co = co_occurrence(label_sets)?;
    if label_sets.len() == 1 {
        return Ok(label_sets[0].clone());
    }
    let p = co.len();
    if c == 0 || c > p {
        return Err(MagicError::InvalidInput(format!(
            "cannot cut {p} patients into {c} clusters"
        )));
    }
    let dist: Vec<Vec<f64>> = co.iter().map(|row| row.iter().map(|v| 1.0 - v).collect()).collect();
    Ok(average_linkage_cut(&dist, c))
}

/// Agglomerative average linkage on a distance matrix, stopped at `c`
/// clusters. Ties merge the lexicographically smallest pair.
pub fn average_linkage_cut(dist: &[Vec<f64>], c: usize) -> Vec<usize> {
    let p = dist.len();
    let mut members: Vec<Vec<usize>> = (0..p).map(|i| vec![i]).collect();
    let mut alive: Vec<bool> = vec![true; p];
    let mut d: Vec<Vec<f64>> = dist.to_vec();
    let mut n_alive = p;
    while n_alive > c {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for a in 0..p {
            if !alive[a] {
                continue;
            }
            for b in (a + 1)..p {
                if alive[b] && d[a][b] < best.2 {
                    best = (a, b, d[a][b]);
                }
            }
        }
        let (a, b, _) = best;
        let (na, nb) = (members[a].len() as f64, members[b].len() as f64);
        for x in 0..p {
            if alive[x] && x != a && x != b {
                let merged = (na * d[a][x] + nb * d[b][x]) / (na + nb);
                d[a][x] = merged;
                d[x][a] = merged;
            }
        }
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        alive[b] = false;
        n_alive -= 1;
    }
    let mut labels = vec![usize::MAX; p];
    let mut clusters: Vec<&Vec<usize>> = (0..p).filter(|&a| alive[a]).map(|a| &members[a]).collect();
    clusters.sort_by_key(|m| *m.iter().min().expect("non-empty cluster"));
    for (id, m) in clusters.iter().enumerate() {
        for &i in m.iter() {
            labels[i] = id;
        }
    }
    labels
}
