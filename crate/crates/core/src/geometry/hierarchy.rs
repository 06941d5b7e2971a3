use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{ReaggError, Result};

/// Composition structure between geometry levels.
///
/// An edge `[child, parent]` says every `child` region is a union of
/// `parent` regions, so walking from child to parent moves toward finer
/// geometry. The finest level (no outgoing edge) is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyTree {
    pub levels: Vec<String>,
    pub edges: Vec<[String; 2]>,
}

impl HierarchyTree {
    pub fn new(levels: Vec<String>, edges: Vec<[String; 2]>) -> Result<Self> {
        let tree = Self { levels, edges };
        tree.validate()?;
        Ok(tree)
    }

    /// The Australian statistical geography composition used in the
    /// examples: mesh blocks compose SA1s and the administrative levels,
    /// SA1s compose everything else.
    pub fn asgs() -> Self {
        let levels = ["MB", "SA1", "SA2", "SA3", "SA4", "STE", "GCCSA", "RA", "SUA", "LGA", "SED", "CED", "POA", "SSC"];
        let edges = [
            ("SA1", "MB"),
            ("SA2", "SA1"),
            ("SA3", "SA2"),
            ("SA4", "SA3"),
            ("GCCSA", "SA4"),
            ("STE", "GCCSA"),
            ("RA", "SA1"),
            ("SUA", "SA2"),
            ("LGA", "MB"),
            ("SED", "MB"),
            ("CED", "MB"),
            ("POA", "MB"),
            ("SSC", "MB"),
        ];
        Self {
            levels: levels.iter().map(|s| s.to_string()).collect(),
            edges: edges.iter().map(|(c, p)| [c.to_string(), p.to_string()]).collect(),
        }
    }

    fn index(&self) -> HashMap<&str, usize> {
        self.levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect()
    }

    fn parents(&self) -> Result<Vec<Vec<usize>>> {
        let index = self.index();
        let mut parents = vec![Vec::new(); self.levels.len()];
        for [child, parent] in &self.edges {
            let c = *index.get(child.as_str()).ok_or_else(|| ReaggError::UnknownLevel(child.clone()))?;
            let p = *index.get(parent.as_str()).ok_or_else(|| ReaggError::UnknownLevel(parent.clone()))?;
            parents[c].push(p);
        }
        Ok(parents)
    }

    /// Checks for unknown levels, cycles and a single finest level from
    /// which every level is reachable.
    pub fn validate(&self) -> Result<()> {
        let parents = self.parents()?;
        let n = self.levels.len();
        if self.index().len() != n {
            return Err(ReaggError::InvalidInput("duplicate level names".into()));
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parents[i].is_empty()).collect();
        if roots.len() != 1 {
            return Err(ReaggError::InvalidInput(format!(
                "hierarchy needs exactly one finest level, found {}",
                roots.len()
            )));
        }
        self.depths_from(&parents)?;
        Ok(())
    }

    /// Longest composition path from the finest level to each level.
    fn depths_from(&self, parents: &[Vec<usize>]) -> Result<Vec<usize>> {
        let n = self.levels.len();
        let mut children = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        for (c, ps) in parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
                indegree[c] += 1;
            }
        }
        let mut depth = vec![0usize; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut visited = 0;
        while let Some(u) = queue.pop_front() {
            visited += 1;
            for &c in &children[u] {
                depth[c] = depth[c].max(depth[u] + 1);
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if visited != n {
            return Err(ReaggError::InvalidInput("hierarchy contains a cycle".into()));
        }
        Ok(depth)
    }

    fn ancestors(&self, start: usize, parents: &[Vec<usize>]) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            if seen.insert(u) {
                stack.extend(parents[u].iter().copied());
            }
        }
        seen
    }
}

/// The coarsest level from which both levels are composed: the first common
/// ancestor when walking toward the finest level.
pub fn common_ancestor_base(level_a: &str, level_b: &str, tree: &HierarchyTree) -> Result<String> {
    let index = tree.index();
    let a = *index.get(level_a).ok_or_else(|| ReaggError::UnknownLevel(level_a.to_string()))?;
    let b = *index.get(level_b).ok_or_else(|| ReaggError::UnknownLevel(level_b.to_string()))?;
    let parents = tree.parents()?;
    let depth = tree.depths_from(&parents)?;
    let common: Vec<usize> = tree
        .ancestors(a, &parents)
        .intersection(&tree.ancestors(b, &parents))
        .copied()
        .collect();
    common
        .into_iter()
        // deepest first; ties broken by declaration order
        .max_by(|&x, &y| depth[x].cmp(&depth[y]).then(y.cmp(&x)))
        .map(|i| tree.levels[i].clone())
        .ok_or_else(|| ReaggError::DisconnectedLevels {
            a: level_a.to_string(),
            b: level_b.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asgs_examples() {
        let tree = HierarchyTree::asgs();
        tree.validate().unwrap();
        assert_eq!(common_ancestor_base("SA2", "RA", &tree).unwrap(), "SA1");
        assert_eq!(common_ancestor_base("SA2", "LGA", &tree).unwrap(), "MB");
        assert_eq!(common_ancestor_base("SA2", "SA2", &tree).unwrap(), "SA2");
        assert_eq!(common_ancestor_base("SA4", "SA2", &tree).unwrap(), "SA2");
        assert_eq!(common_ancestor_base("SED", "CED", &tree).unwrap(), "MB");
    }

    #[test]
    fn unknown_level() {
        let tree = HierarchyTree::asgs();
        assert!(matches!(
            common_ancestor_base("SA2", "XYZ", &tree),
            Err(ReaggError::UnknownLevel(l)) if l == "XYZ"
        ));
    }

    #[test]
    fn invalid_trees() {
        let s = |v: &str| v.to_string();
        let cyclic = HierarchyTree::new(
            vec![s("A"), s("B"), s("C")],
            vec![[s("B"), s("A")], [s("C"), s("B")], [s("B"), s("C")]],
        );
        assert!(cyclic.is_err());
        let two_roots = HierarchyTree::new(vec![s("A"), s("B")], vec![]);
        assert!(two_roots.is_err());
    }

    #[test]
    fn disconnected_levels() {
        // bypass validation to build a forest
        let s = |v: &str| v.to_string();
        let forest = HierarchyTree {
            levels: vec![s("A"), s("B"), s("C"), s("D")],
            edges: vec![[s("B"), s("A")], [s("D"), s("C")]],
        };
        assert!(matches!(
            common_ancestor_base("B", "D", &forest),
            Err(ReaggError::DisconnectedLevels { .. })
        ));
    }
}
