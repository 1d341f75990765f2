pub mod attention;
pub mod checkpoint;
pub mod network;
pub mod params;

pub use attention::{attention_on_graph, scaled_dot_attention, AttentionInputs, AttentionWeights};
pub use checkpoint::{load_student, load_teacher, read_meta, save_student, save_teacher, CheckpointMeta};
pub use network::{
    forward_captioner, forward_classifier, forward_segmenter, greedy_decode, student_forward, ArchConfig, BlockSpec,
    ModelConfig, MultiTaskOutput, Network, ProblemShape, Student, Teacher,
};
pub use params::{Group, Init, Param, ParamStore};
