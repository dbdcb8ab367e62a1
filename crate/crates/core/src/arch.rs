//! Declarative architecture descriptions.
//!
//! Every network is a stack of linear maps on a spatial grid. Fully connected
//! layers live on a 1×1 grid; 1D convolutions on a 1×N grid; 2D convolutions
//! on an H×W grid. Depth is the minimal depth: each residual block counts once.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Mlp,
    Cnn1d,
    Cnn2d,
    ResNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Padding {
    Circular,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    /// Exact form x·Φ(x).
    Gelu,
    Identity,
}

/// How the output head is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Readout {
    /// He fan-in variance 2/fan_in.
    He,
    /// Mean-field readout: He variance further divided by fan_in.
    MuP,
}

/// Spatial index set Λ; `height == 1` for 1D maps, 1×1 for dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub const POINT: Grid = Grid { height: 1, width: 1 };

    pub fn line(n: usize) -> Self {
        Self { height: 1, width: n }
    }

    pub fn plane(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn size(&self) -> usize {
        self.height * self.width
    }

    pub fn is_point(&self) -> bool {
        self.size() == 1
    }
}

/// Kernel support: a set of (row, column) offsets of arbitrary shape.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Kernel {
    offsets: Vec<(i32, i32)>,
}

impl Kernel {
    pub fn new(offsets: Vec<(i32, i32)>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::Arch("kernel support must be non-empty".into()));
        }
        let mut seen = offsets.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != offsets.len() {
            return Err(Error::Arch("kernel offsets must be distinct".into()));
        }
        Ok(Self { offsets })
    }

    /// The single offset {0}; a dense layer on a 1×1 grid.
    pub fn point() -> Self {
        Self { offsets: vec![(0, 0)] }
    }

    /// Centered 1D support {−⌊k/2⌋, …, k−1−⌊k/2⌋}.
    pub fn line(k: usize) -> Self {
        let lo = -((k / 2) as i32);
        Self { offsets: (0..k as i32).map(|d| (0, lo + d)).collect() }
    }

    /// Centered kh×kw rectangle.
    pub fn rect(kh: usize, kw: usize) -> Self {
        let (lh, lw) = (-((kh / 2) as i32), -((kw / 2) as i32));
        let mut offsets = Vec::with_capacity(kh * kw);
        for a in 0..kh as i32 {
            for b in 0..kw as i32 {
                offsets.push((lh + a, lw + b));
            }
        }
        Self { offsets }
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    /// Cardinality k = |K|.
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Axial half-spans (s_h, s_w) = (max |Δ_h|, max |Δ_w|).
    pub fn half_spans(&self) -> (usize, usize) {
        let sh = self.offsets.iter().map(|o| o.0.unsigned_abs()).max().unwrap_or(0);
        let sw = self.offsets.iter().map(|o| o.1.unsigned_abs()).max().unwrap_or(0);
        (sh as usize, sw as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualParams {
    /// Linear maps per branch (m ≥ 1).
    pub branch_depth: usize,
    /// Variance constant c in c/(K·fan_in).
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub family: Family,
    pub input_channels: usize,
    pub grid: Grid,
    /// Minimal depth L (residual blocks count once).
    pub depth: usize,
    /// Output channels (neurons for dense layers) of each depth unit.
    pub widths: Vec<usize>,
    /// Kernel of each depth unit; also used by the residual stem and branches.
    pub kernels: Vec<Kernel>,
    pub padding: Padding,
    pub activation: Activation,
    pub residual: Option<ResidualParams>,
    pub outputs: usize,
    pub readout: Readout,
    /// Apply the GELU variance multiplier to the head as well.
    pub gelu_adjust_head: bool,
}

impl ArchSpec {
    pub fn mlp(input: usize, width: usize, depth: usize, outputs: usize) -> Self {
        Self {
            family: Family::Mlp,
            input_channels: input,
            grid: Grid::POINT,
            depth,
            widths: vec![width; depth],
            kernels: vec![Kernel::point(); depth],
            padding: Padding::Circular,
            activation: Activation::Relu,
            residual: None,
            outputs,
            readout: Readout::He,
            gelu_adjust_head: false,
        }
    }

    pub fn cnn1d(
        input_channels: usize,
        length: usize,
        channels: usize,
        depth: usize,
        kernel: usize,
        outputs: usize,
    ) -> Self {
        Self {
            family: Family::Cnn1d,
            input_channels,
            grid: Grid::line(length),
            depth,
            widths: vec![channels; depth],
            kernels: vec![Kernel::line(kernel); depth],
            padding: Padding::Circular,
            activation: Activation::Relu,
            residual: None,
            outputs,
            readout: Readout::He,
            gelu_adjust_head: false,
        }
    }

    pub fn cnn2d(
        input_channels: usize,
        grid: Grid,
        channels: usize,
        depth: usize,
        kernel: (usize, usize),
        outputs: usize,
    ) -> Self {
        Self {
            family: Family::Cnn2d,
            input_channels,
            grid,
            depth,
            widths: vec![channels; depth],
            kernels: vec![Kernel::rect(kernel.0, kernel.1); depth],
            padding: Padding::Circular,
            activation: Activation::Relu,
            residual: None,
            outputs,
            readout: Readout::He,
            gelu_adjust_head: false,
        }
    }

    /// Residual network with dense branches (1×1 grid).
    pub fn resnet_dense(input: usize, width: usize, blocks: usize, outputs: usize) -> Self {
        Self {
            family: Family::ResNet,
            residual: Some(ResidualParams { branch_depth: 1, c: 2.0 }),
            ..Self::mlp(input, width, blocks, outputs)
        }
    }

    /// Residual network with 1D convolutional branches.
    pub fn resnet_conv1d(
        input_channels: usize,
        length: usize,
        channels: usize,
        blocks: usize,
        kernel: usize,
        outputs: usize,
    ) -> Self {
        Self {
            family: Family::ResNet,
            residual: Some(ResidualParams { branch_depth: 1, c: 2.0 }),
            ..Self::cnn1d(input_channels, length, channels, blocks, kernel, outputs)
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_readout(mut self, readout: Readout) -> Self {
        self.readout = readout;
        self
    }

    pub fn with_kernels(mut self, kernels: Vec<Kernel>) -> Self {
        self.kernels = kernels;
        self
    }

    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        self.widths = widths;
        self
    }

    pub fn with_residual(mut self, branch_depth: usize, c: f64) -> Self {
        self.residual = Some(ResidualParams { branch_depth, c });
        self
    }

    pub fn is_residual(&self) -> bool {
        self.residual.is_some()
    }

    /// Block count K (equal to the minimal depth for residual networks).
    pub fn blocks(&self) -> usize {
        if self.is_residual() {
            self.depth
        } else {
            0
        }
    }

    /// Effective width M_ℓ = C_ℓ·N_ℓ of depth unit ℓ (1-based).
    pub fn effective_width(&self, unit: usize) -> usize {
        self.widths[unit - 1] * self.grid.size()
    }

    /// Shape of a batch of `b` inputs.
    pub fn input_shape(&self, b: usize) -> Vec<usize> {
        self.activation_shape(b, self.input_channels)
    }

    /// Shape of a batch of `b` activations with `channels` channels.
    pub fn activation_shape(&self, b: usize, channels: usize) -> Vec<usize> {
        match self.family {
            Family::Mlp => vec![b, channels],
            Family::Cnn1d => vec![b, channels, self.grid.width],
            Family::Cnn2d => vec![b, channels, self.grid.height, self.grid.width],
            Family::ResNet if self.grid.is_point() => vec![b, channels],
            Family::ResNet if self.grid.height == 1 => vec![b, channels, self.grid.width],
            Family::ResNet => vec![b, channels, self.grid.height, self.grid.width],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Arch(m.to_string()));
        if self.depth == 0 && self.is_residual() {
            return fail("residual network needs at least one block");
        }
        if self.input_channels == 0 || self.outputs == 0 || self.grid.size() == 0 {
            return fail("input channels, outputs and grid size must be positive");
        }
        if self.widths.len() != self.depth || self.kernels.len() != self.depth {
            return fail("widths and kernels must have one entry per depth unit");
        }
        if self.widths.iter().any(|&w| w == 0) {
            return fail("widths must be positive");
        }
        match self.family {
            Family::Mlp if !self.grid.is_point() => return fail("MLP uses a 1x1 grid"),
            Family::Cnn1d if self.grid.height != 1 => return fail("1D CNN grid height must be 1"),
            _ => {}
        }
        if self.grid.is_point() && self.kernels.iter().any(|k| k.offsets() != [(0, 0)]) {
            return fail("dense layers take the point kernel");
        }
        if self.grid.height == 1 && self.kernels.iter().any(|k| k.half_spans().0 != 0) {
            return fail("1D kernels have zero row offsets");
        }
        match (self.family, self.residual) {
            (Family::ResNet, None) => return fail("ResNet family requires residual parameters"),
            (Family::ResNet, Some(r)) => {
                if r.branch_depth == 0 {
                    return fail("branch depth m must be >= 1");
                }
                if !(r.c > 0.0) {
                    return fail("residual constant c must be positive");
                }
                if self.widths.iter().any(|&w| w != self.widths[0]) {
                    return fail("identity skips require equal widths across blocks");
                }
            }
            (_, Some(_)) => return fail("only the ResNet family has residual parameters"),
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_shapes() {
        assert_eq!(Kernel::line(3).offsets(), &[(0, -1), (0, 0), (0, 1)]);
        assert_eq!(Kernel::rect(3, 3).len(), 9);
        assert_eq!(Kernel::rect(3, 5).half_spans(), (1, 2));
        assert!(Kernel::new(vec![(0, 1), (0, 1)]).is_err());
    }

    #[test]
    fn validation() {
        assert!(ArchSpec::mlp(4, 8, 3, 2).validate().is_ok());
        assert!(ArchSpec::cnn1d(1, 8, 4, 2, 3, 2).validate().is_ok());
        assert!(ArchSpec::resnet_dense(4, 8, 3, 2).validate().is_ok());
        let bad = ArchSpec::resnet_dense(4, 8, 3, 2).with_widths(vec![8, 8, 9]);
        assert!(bad.validate().is_err());
        let bad = ArchSpec::mlp(4, 8, 3, 2).with_residual(1, 2.0);
        assert!(bad.validate().is_err());
        let bad = ArchSpec::resnet_dense(4, 8, 3, 2).with_residual(0, 2.0);
        assert!(bad.validate().is_err());
    }
}
