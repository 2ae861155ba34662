//! Convolution layers: spec + weight + bias bundled behind one forward.

use super::params::{ParamBuilder, ParamId, Session};
use crate::autodiff::{Conv2dSpec, ConvT2dSpec, TensorId};
use crate::num::Real;

pub struct Conv2dLayer {
    pub spec: Conv2dSpec,
    weight: ParamId,
    bias: ParamId,
}

impl Conv2dLayer {
    pub fn new<R: Real>(pb: &mut ParamBuilder<R>, name: &str, spec: Conv2dSpec) -> Self {
        let shape = [spec.out_channels, spec.kernel.0, spec.kernel.1, spec.in_channels];
        let weight = pb.uniform(format!("{name}.weight"), &shape, spec.fan_in());
        let bias = pb.zeros(format!("{name}.bias"), &[spec.out_channels]);
        Conv2dLayer { spec, weight, bias }
    }

    pub fn forward<R: Real>(&self, sess: &mut Session<R>, x: TensorId) -> TensorId {
        let w = sess.param(self.weight);
        let b = sess.param(self.bias);
        let y = sess.tape.conv2d(x, w, &self.spec);
        sess.tape.add_bias(y, b)
    }
}

pub struct ConvT2dLayer {
    pub spec: ConvT2dSpec,
    weight: ParamId,
    bias: ParamId,
}

impl ConvT2dLayer {
    pub fn new<R: Real>(pb: &mut ParamBuilder<R>, name: &str, spec: ConvT2dSpec) -> Self {
        let shape = [spec.out_channels, spec.kernel.0, spec.kernel.1, spec.in_channels];
        let weight = pb.uniform(format!("{name}.weight"), &shape, spec.fan_in());
        let bias = pb.zeros(format!("{name}.bias"), &[spec.out_channels]);
        ConvT2dLayer { spec, weight, bias }
    }

    pub fn forward<R: Real>(&self, sess: &mut Session<R>, x: TensorId) -> TensorId {
        let w = sess.param(self.weight);
        let b = sess.param(self.bias);
        let y = sess.tape.conv_t2d(x, w, &self.spec);
        sess.tape.add_bias(y, b)
    }
}
