//! JSON dump of one look-ahead tree and a strict reader for it.

use serde::{Deserialize, Serialize};
use treeqn_autodiff::{argmax_first, ParamStore, Tape};
use treeqn_boxworld::{observe, BoardState};
use treeqn_model::{Arch, Network, TreeNode};

use crate::CliError;

pub const DUMP_FORMAT: &str = "treeqn-tree-dump-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeDump {
    pub format: String,
    pub arch: Arch,
    /// The board as 8 lines of `A B G O .`.
    pub board: String,
    pub depth: usize,
    pub n_actions: usize,
    /// Nodes below the root.
    pub node_count: usize,
    /// Argmax of the root Q-values (policy logits for ATreeC).
    pub greedy_action: usize,
    pub root: TreeNode,
}

pub fn tree_dump(
    net: &Network,
    store: &ParamStore,
    state: &BoardState,
    latents: bool,
) -> Result<TreeDump, CliError> {
    let obs = observe(state);
    let mut shape = vec![1];
    shape.extend_from_slice(obs.shape());
    let mut tape = Tape::no_grad();
    let f = net.forward_obs(&mut tape, store, &obs.reshaped(shape));
    let tree = f.tree.ok_or_else(|| {
        CliError::Config(format!("{} has no look-ahead tree to inspect", net.arch()))
    })?;
    let root = tree.node(&tape, 0, latents);
    Ok(TreeDump {
        format: DUMP_FORMAT.to_string(),
        arch: net.arch(),
        board: state.to_ascii(),
        depth: tree.depth(),
        n_actions: net.n_actions(),
        node_count: root.descendant_count(),
        greedy_action: argmax_first(tape.value(f.scores).data()),
        root,
    })
}

/// Parse a dump and check that its tree is complete and self-consistent.
pub fn validate(text: &str) -> Result<TreeDump, String> {
    let dump: TreeDump = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if dump.format != DUMP_FORMAT {
        return Err(format!("unknown format {:?}", dump.format));
    }
    let board = BoardState::from_ascii(&dump.board).map_err(|e| e.to_string())?;
    if board.to_ascii() != dump.board {
        return Err("board is not in canonical form".into());
    }
    if dump.arch.tree_depth() != Some(dump.depth) {
        return Err(format!("depth {} does not match {}", dump.depth, dump.arch));
    }
    if dump.n_actions == 0 {
        return Err("no actions".into());
    }
    let expected: usize = (1..=dump.depth as u32).map(|l| dump.n_actions.pow(l)).sum();
    if dump.node_count != expected || dump.root.descendant_count() != expected {
        return Err(format!(
            "node_count {} and tree size {} should both be {expected}",
            dump.node_count,
            dump.root.descendant_count()
        ));
    }
    if dump.root.action.is_some() {
        return Err("root has an action".into());
    }
    let latents = dump.root.z.is_some();
    check_node(&dump, &dump.root, 0, None, latents)?;
    if dump.greedy_action != argmax_first(&dump.root.q) {
        return Err("greedy_action is not the argmax of the root Q".into());
    }
    Ok(dump)
}

fn check_node(
    dump: &TreeDump,
    node: &TreeNode,
    level: usize,
    parent_k: Option<usize>,
    latents: bool,
) -> Result<(), String> {
    let at = |msg: &str| format!("node at depth {level}: {msg}");
    if node.depth != level {
        return Err(at(&format!("depth field is {}", node.depth)));
    }
    let numbers = node
        .reward_preds
        .iter()
        .chain(&node.q)
        .chain([&node.value, &node.v_lambda])
        .chain(node.z.iter().flatten())
        .chain(node.intermediate.iter().flatten());
    if numbers.clone().any(|v| !v.is_finite()) {
        return Err(at("non-finite value"));
    }
    if node.z.is_some() != latents {
        return Err(at("latents on some nodes only"));
    }
    if let Some(z) = &node.z {
        if z.is_empty() || parent_k.is_some_and(|k| k != z.len()) {
            return Err(at("latent width differs from its parent"));
        }
    }
    match (&node.intermediate, latents && level > 0) {
        (Some(h), true) if h.len() == node.z.as_ref().map_or(0, Vec::len) => {}
        (None, false) => {}
        _ => {
            return Err(at(
                "intermediate must accompany the latent of every non-root node",
            ))
        }
    }
    let a = dump.n_actions;
    if level < dump.depth {
        if node.children.len() != a || node.q.len() != a || node.reward_preds.len() != a {
            return Err(at(
                "internal node needs one child, Q-value and reward per action",
            ));
        }
        for (i, c) in node.children.iter().enumerate() {
            if c.action != Some(i) {
                return Err(at(&format!("child {i} has action {:?}", c.action)));
            }
            check_node(dump, c, level + 1, node.z.as_ref().map(Vec::len), latents)?;
        }
    } else if !node.children.is_empty() || !node.q.is_empty() || !node.reward_preds.is_empty() {
        return Err(at("leaf with children, Q-values or rewards"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use treeqn_boxworld::generate_level;
    use treeqn_model::{ModelDims, TreeConfig};

    fn dump(arch: Arch, latents: bool) -> TreeDump {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (net, store) = Network::new(arch, &ModelDims::boxworld(), TreeConfig::new(1), &mut rng);
        tree_dump(&net, &store, &generate_level(5), latents).unwrap()
    }

    #[test]
    fn depth_two_has_twenty_nodes_and_round_trips() {
        for latents in [false, true] {
            let d = dump(Arch::TreeQn { depth: 2 }, latents);
            assert_eq!((d.depth, d.node_count), (2, 20));
            let text = serde_json::to_string_pretty(&d).unwrap();
            assert_eq!(validate(&text).unwrap(), d);
        }
    }

    #[test]
    fn non_tree_architectures_are_refused() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (net, store) = Network::new(
            Arch::Dqn,
            &ModelDims::boxworld(),
            TreeConfig::new(1),
            &mut rng,
        );
        assert!(tree_dump(&net, &store, &generate_level(5), false).is_err());
    }

    #[test]
    fn tampering_is_caught() {
        let d = dump(Arch::ATreeC { depth: 1 }, true);
        let mut v = serde_json::to_value(&d).unwrap();
        v["extra"] = 1.into();
        assert!(validate(&v.to_string()).is_err());

        let mut bad = d.clone();
        bad.root.children.pop();
        assert!(validate(&serde_json::to_string(&bad).unwrap()).is_err());

        let mut bad = d.clone();
        bad.root.children[1].action = Some(3);
        assert!(validate(&serde_json::to_string(&bad).unwrap()).is_err());

        let mut bad = d.clone();
        bad.root.children[0].q = vec![0.0; 4];
        assert!(validate(&serde_json::to_string(&bad).unwrap()).is_err());

        let mut bad = d.clone();
        bad.root.children[2].intermediate = None;
        assert!(validate(&serde_json::to_string(&bad).unwrap()).is_err());

        let mut bad = d.clone();
        bad.greedy_action = (d.greedy_action + 1) % 4;
        assert!(validate(&serde_json::to_string(&bad).unwrap()).is_err());

        let mut bad = d;
        bad.depth = 2;
        assert!(validate(&serde_json::to_string(&bad).unwrap()).is_err());
    }
}
