//! Adaptive concurrent priority queue.
//!
//! * [`pqcore`]: lock-free skip-list priority queue with exact and relaxed
//!   (spray) deleteMin.
//! * [`delegate`]: Nuddle, delegation of queue operations to server threads.
//! * [`adaptive`]: SmartPQ, which switches between direct access and
//!   delegation using a decision tree.
//! * [`classify`]: labeling, CART training, prediction and the tree format.
//! * [`topology`]: context discovery, placement and pinning.

pub mod adaptive;
pub mod classify;
pub mod delegate;
pub mod pqcore;
pub mod topology;

pub use adaptive::{DecisionLoop, SmartClient, SmartPq, SmartServer, Transition, WorkloadStats};
pub use classify::{label, train, Mode, TrainConfig};
pub use delegate::{ClientHandle, LineSize, NuddleConfig, NuddlePq, ServerHandle};
pub use pqcore::{DeleteMode, PqError, SkipListPq, SprayParams};
pub use topology::{pin_self, Topology};

pub type FeatureVector = classify::Features<f64>;
pub type LabeledSample = classify::Sample<f64>;
pub type DecisionTree = classify::Tree<f64>;
pub type TreeNode = classify::TreeNode<f64>;

pub type FeatureVectorF32 = classify::Features<f32>;
pub type LabeledSampleF32 = classify::Sample<f32>;
pub type DecisionTreeF32 = classify::Tree<f32>;
