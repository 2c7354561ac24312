use treeqn_autodiff::ParamStore;

/// Frozen copy of the online parameters used for Q bootstrapping.
#[derive(Clone, Debug)]
pub struct TargetNetwork {
    pub params: ParamStore,
    /// Transition count at the most recent copy.
    pub last_sync: u64,
}

impl TargetNetwork {
    pub fn new(online: &ParamStore, transitions: u64) -> Self {
        TargetNetwork {
            params: online.clone(),
            last_sync: transitions,
        }
    }

    /// Copy the online weights when a multiple of `interval` lies in
    /// `(last_sync, transitions]`. Returns whether a copy happened.
    pub fn maybe_sync(&mut self, online: &ParamStore, transitions: u64, interval: u64) -> bool {
        if transitions / interval > self.last_sync / interval {
            self.params.copy_values_from(online);
            self.last_sync = transitions;
            true
        } else {
            false
        }
    }
}
