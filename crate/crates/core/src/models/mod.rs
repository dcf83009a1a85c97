//! Model definitions: the multi-stream teacher (per-class local streams
//! plus a shared global head) and the residual student with an embedding
//! and classification head.

mod checkpoint;
mod student;
mod teacher;

pub use checkpoint::{load_student, load_teacher, param_bytes, save_student, save_teacher, TrainingMeta};
pub use student::{StudentCache, StudentConfig, StudentModel, STUDENT_EMBEDDING_DIMS};
pub use teacher::{GlobalCache, StreamCache, TeacherConfig, TeacherModel};
