//! Log-space elementary operations, parameter storage, optimizers and the
//! finite-difference gradient check.

mod gradcheck;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{gradient_check, sample_coordinates, Coordinate};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};
pub use params::{Group, ParameterSet};
pub use tensor::{affine, log_sigmoid, log_softmax, log_sum_exp, sigmoid, Tensor};

pub(crate) use tensor::{
    add_into, affine_into, dot, log_softmax_backward, log_softmax_in_place, lse, lse2, matvec_into,
    matvec_t_acc, outer_acc,
};
