use super::genotype::{Genotype, RetainPolicy};
use super::ops::{OperationKind, SearchSpace};
use crate::{Error, Result};

pub const DEFAULT_ENUMERATION_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationOptions {
    /// Treat `zero` as a choice that drops the edge. Requires `retain=all`.
    pub allow_zero: bool,
    pub cap: usize,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self {
            allow_zero: false,
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

fn choices_per_edge(space: &SearchSpace, opts: EnumerationOptions) -> Result<Vec<Option<OperationKind>>> {
    let mut out: Vec<Option<OperationKind>> = space.non_zero_ops().into_iter().map(Some).collect();
    if out.is_empty() {
        return Err(Error::invalid("search space has no non-zero operation"));
    }
    if opts.allow_zero && space.column_of(OperationKind::Zero).is_some() {
        out.insert(0, None);
    }
    Ok(out)
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Closed-form number of genotypes `enumerate_genotypes` would return.
pub fn genotype_count(space: &SearchSpace, retain: RetainPolicy, opts: EnumerationOptions) -> Result<u128> {
    let topology = space.topology();
    retain.validate(topology)?;
    if opts.allow_zero && retain != RetainPolicy::All {
        return Err(Error::invalid("zero as a choice is only defined for retain=all"));
    }
    let per_edge = choices_per_edge(space, opts)?.len() as u128;
    let mut total = 1u128;
    for dst in 1..=topology.num_intermediate() {
        let indeg = dst;
        let keep = retain.keep(indeg);
        let node = binomial(indeg, keep).saturating_mul(per_edge.saturating_pow(keep as u32));
        total = total.saturating_mul(node);
    }
    Ok(total)
}

/// Every genotype of the space under `retain`, sorted canonically.
pub fn enumerate_genotypes(
    space: &SearchSpace,
    retain: RetainPolicy,
    opts: EnumerationOptions,
) -> Result<Vec<Genotype>> {
    let count = genotype_count(space, retain, opts)?;
    if count > opts.cap as u128 {
        return Err(Error::EnumerationCap { count, cap: opts.cap });
    }
    let topology = space.topology();
    let per_edge = choices_per_edge(space, opts)?;

    // per node: every admissible list of (edge, op) choices
    let mut per_node: Vec<Vec<Vec<(usize, OperationKind)>>> = Vec::new();
    for dst in 1..=topology.num_intermediate() {
        let incoming = topology.incoming(dst);
        let keep = retain.keep(incoming.len());
        let mut options = Vec::new();
        for subset in subsets(&incoming, keep) {
            let mut partial: Vec<Vec<(usize, OperationKind)>> = vec![Vec::new()];
            for &e in &subset {
                partial = partial
                    .into_iter()
                    .flat_map(|p| {
                        per_edge.iter().map(move |c| {
                            let mut q = p.clone();
                            if let Some(op) = *c {
                                q.push((e, op));
                            }
                            q
                        })
                    })
                    .collect();
            }
            options.extend(partial);
        }
        per_node.push(options);
    }

    let mut combos: Vec<Vec<(usize, OperationKind)>> = vec![Vec::new()];
    for options in &per_node {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                options.iter().map(move |o| {
                    let mut next = c.clone();
                    next.extend_from_slice(o);
                    next
                })
            })
            .collect();
    }
    let mut out = combos
        .into_iter()
        .map(|c| Genotype::new(topology.num_intermediate(), retain, c))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let (first, rest) = items.split_first().expect("non-empty");
    let mut with: Vec<Vec<usize>> = subsets(rest, k - 1)
        .into_iter()
        .map(|mut s| {
            s.insert(0, *first);
            s
        })
        .collect();
    with.extend(subsets(rest, k));
    with
}
