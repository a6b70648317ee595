use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AgentError, ACTION_COUNT};
use crate::numerics::{Affine, Checkpoint, GruCache, GruCell, NumericsError, Parameterized};
use crate::opinion::Opinion;
use crate::world::{Action, Cue};

/// `[u, top belief, visible, visibility, distance, sin bearing, cos bearing,
/// previous action one-hot (3)]`.
pub const POLICY_INPUT_DIM: usize = 10;
pub const POLICY_KIND: &str = "policy";

/// Builds the per-step policy input. Distance and bearing are zero while the
/// target is not visible; `range_m` scales the distance into roughly `[0, 1]`.
pub fn policy_input(opinion: &Opinion, cue: &Cue, prev: Option<Action>, range_m: f64) -> Vec<f64> {
    let mut v = Vec::with_capacity(POLICY_INPUT_DIM);
    v.push(opinion.uncertainty());
    v.push(opinion.top_belief());
    v.push(if cue.visible { 1.0 } else { 0.0 });
    v.push(cue.visibility);
    match cue.bearing_deg.filter(|_| cue.visible) {
        Some(b) => {
            v.push(cue.distance_m / range_m);
            let r = b.to_radians();
            v.push(r.sin());
            v.push(r.cos());
        }
        None => v.extend([0.0, 0.0, 0.0]),
    }
    let mut one_hot = [0.0; ACTION_COUNT];
    if let Some(a) = prev {
        one_hot[a.index()] = 1.0;
    }
    v.extend(one_hot);
    v
}

/// Recurrent aggregator with actor and critic heads.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub gru: GruCell,
    pub actor: Affine,
    pub critic: Affine,
}

/// One step of the forward pass.
pub struct PolicyStep {
    pub h: Vec<f64>,
    pub cache: GruCache,
    pub logits: Vec<f64>,
    pub value: f64,
}

impl PolicyNet {
    pub fn init<R: Rng + ?Sized>(hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            gru: GruCell::init(POLICY_INPUT_DIM, hidden_dim, rng),
            // small actor weights start the policy near uniform
            actor: Affine::init(hidden_dim, ACTION_COUNT, 0.1, rng),
            critic: Affine::init(hidden_dim, 1, 1.0, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim
    }

    pub fn initial_state(&self) -> Vec<f64> {
        self.gru.initial_state()
    }

    pub fn step(&self, input: &[f64], h: &[f64]) -> Result<PolicyStep, NumericsError> {
        let (h, cache) = self.gru.forward(input, h)?;
        let logits = self.actor.forward(&h)?;
        let value = self.critic.forward(&h)?[0];
        Ok(PolicyStep {
            h,
            cache,
            logits,
            value,
        })
    }

    pub fn to_checkpoint(&self, extra_meta: serde_json::Value) -> Checkpoint {
        let mut meta = serde_json::json!({
            "input_dim": POLICY_INPUT_DIM,
            "hidden_dim": self.hidden_dim(),
        });
        if let (Some(m), serde_json::Value::Object(extra)) = (meta.as_object_mut(), extra_meta) {
            m.extend(extra);
        }
        Checkpoint::capture(POLICY_KIND, self, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, AgentError> {
        ck.expect_kind(POLICY_KIND)?;
        let hidden = ck
            .meta
            .get("hidden_dim")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| NumericsError::Checkpoint("meta.hidden_dim missing".into()))? as usize;
        let input = ck.meta.get("input_dim").and_then(|v| v.as_u64());
        if input != Some(POLICY_INPUT_DIM as u64) {
            return Err(NumericsError::Checkpoint(format!("policy input_dim {input:?}, expected {POLICY_INPUT_DIM}")).into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Self::init(hidden, &mut rng);
        ck.restore_into(&mut net)?;
        Ok(net)
    }
}

impl Parameterized for PolicyNet {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.gru.visit(&mut |n, s, d| f(&format!("gru.{n}"), s, d));
        self.actor.visit(&mut |n, s, d| f(&format!("actor.{n}"), s, d));
        self.critic.visit(&mut |n, s, d| f(&format!("critic.{n}"), s, d));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.gru.visit_mut(&mut |n, d| f(&format!("gru.{n}"), d));
        self.actor.visit_mut(&mut |n, d| f(&format!("actor.{n}"), d));
        self.critic.visit_mut(&mut |n, d| f(&format!("critic.{n}"), d));
    }
}
