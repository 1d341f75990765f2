pub mod losses;
pub mod optim;
pub mod softmax;
pub mod train;

pub use losses::{
    bce_with_logits, combined_loss, dice_loss, distill_binary, distill_rows, distillation_loss, masked_cross_entropy,
    task_loss, LossGrad, Task, TaskTarget, DICE_EPS, PAD_ID,
};
pub use optim::{sgd_step, Adam, ParamGrads};
pub use softmax::{temperature_softmax, SoftDistribution};
pub use train::{
    distill_student, freeze_heads, freeze_heads_by_name, new_student, run_phase, train_teacher, DistillConfig,
    EpochRecord, PhaseChecksums, TargetMode, TeacherConfig, TrainLog,
};
