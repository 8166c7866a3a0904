use crate::abi::HandleKind;
use crate::backends::NativeStatus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Communicator {
    pub context_id: u32,
    /// World ranks of the members, indexed by communicator rank.
    pub group: Vec<u32>,
    pub my_rank: u32,
}

impl Communicator {
    pub fn size(&self) -> u32 {
        self.group.len() as u32
    }

    /// World rank of communicator rank `r`.
    pub fn world_rank_of(&self, r: u32) -> Option<u32> {
        self.group.get(r as usize).copied()
    }

    pub fn comm_rank_of(&self, world: u32) -> Option<u32> {
        self.group.iter().position(|&w| w == world).map(|p| p as u32)
    }

    /// Wire context for point-to-point traffic.
    pub fn p2p_context(&self) -> u32 {
        self.context_id << 1
    }

    /// Wire context for collective traffic, kept apart from application
    /// messages on the same communicator.
    pub fn collective_context(&self) -> u32 {
        (self.context_id << 1) | 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Byte,
    I32,
    I64,
    F64,
}

impl ElementKind {
    pub fn size(self) -> u64 {
        match self {
            ElementKind::Byte => 1,
            ElementKind::I32 => 4,
            ElementKind::I64 | ElementKind::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Datatype {
    pub extent_bytes: u64,
    pub element_kind: ElementKind,
    /// Number of base elements in one item of this type.
    pub count: u64,
}

impl Datatype {
    pub fn basic(kind: ElementKind) -> Self {
        Datatype { extent_bytes: kind.size(), element_kind: kind, count: 1 }
    }

    pub fn contiguous(count: u32, base: &Datatype) -> Self {
        Datatype {
            extent_bytes: base.extent_bytes * count as u64,
            element_kind: base.element_kind,
            count: base.count * count as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Max,
    Min,
    Prod,
}

impl ReduceKind {
    /// Combines `rhs` into `acc` elementwise: `acc[i] = acc[i] ⊕ rhs[i]`.
    pub fn apply(self, elem: ElementKind, acc: &mut [u8], rhs: &[u8]) -> Result<()> {
        debug_assert_eq!(acc.len(), rhs.len());
        macro_rules! fold {
            ($t:ty, $combine:expr) => {{
                const W: usize = std::mem::size_of::<$t>();
                for (a, b) in acc.chunks_exact_mut(W).zip(rhs.chunks_exact(W)) {
                    let x = <$t>::from_le_bytes(a.try_into().unwrap());
                    let y = <$t>::from_le_bytes(b.try_into().unwrap());
                    let f: fn($t, $t) -> $t = $combine;
                    a.copy_from_slice(&f(x, y).to_le_bytes());
                }
            }};
        }
        match (elem, self) {
            (ElementKind::Byte, _) => {
                return Err(Error::KindMismatch(format!(
                    "{self:?} is not defined on byte datatypes"
                )))
            }
            (ElementKind::I32, ReduceKind::Sum) => fold!(i32, |x, y| x.wrapping_add(y)),
            (ElementKind::I32, ReduceKind::Prod) => fold!(i32, |x, y| x.wrapping_mul(y)),
            (ElementKind::I32, ReduceKind::Max) => fold!(i32, |x, y| x.max(y)),
            (ElementKind::I32, ReduceKind::Min) => fold!(i32, |x, y| x.min(y)),
            (ElementKind::I64, ReduceKind::Sum) => fold!(i64, |x, y| x.wrapping_add(y)),
            (ElementKind::I64, ReduceKind::Prod) => fold!(i64, |x, y| x.wrapping_mul(y)),
            (ElementKind::I64, ReduceKind::Max) => fold!(i64, |x, y| x.max(y)),
            (ElementKind::I64, ReduceKind::Min) => fold!(i64, |x, y| x.min(y)),
            (ElementKind::F64, ReduceKind::Sum) => fold!(f64, |x, y| x + y),
            (ElementKind::F64, ReduceKind::Prod) => fold!(f64, |x, y| x * y),
            (ElementKind::F64, ReduceKind::Max) => fold!(f64, f64::max),
            (ElementKind::F64, ReduceKind::Min) => fold!(f64, f64::min),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    /// Sends are eager, so a send request is complete when created.
    SendDone(NativeStatus),
    RecvPending {
        comm: Communicator,
        src_world: Option<u32>,
        tag: Option<i32>,
        capacity: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendObject {
    Communicator(Communicator),
    Group(Vec<u32>),
    Datatype(Datatype),
    ReduceOp(ReduceKind),
    Request(Request),
}

impl BackendObject {
    pub fn kind(&self) -> HandleKind {
        match self {
            BackendObject::Communicator(_) => HandleKind::Comm,
            BackendObject::Group(_) => HandleKind::Group,
            BackendObject::Datatype(_) => HandleKind::Datatype,
            BackendObject::ReduceOp(_) => HandleKind::Op,
            BackendObject::Request(_) => HandleKind::Request,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f64s(v: &[f64]) -> Vec<u8> {
        v.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    #[test]
    fn contiguous_extent_composes() {
        let i32t = Datatype::basic(ElementKind::I32);
        let four = Datatype::contiguous(4, &i32t);
        assert_eq!(four.extent_bytes, 16);
        let eight = Datatype::contiguous(2, &four);
        assert_eq!((eight.extent_bytes, eight.count), (32, 8));
    }

    #[test]
    fn reductions() {
        let mut acc = f64s(&[0.1, 5.0]);
        ReduceKind::Sum.apply(ElementKind::F64, &mut acc, &f64s(&[0.2, 1.0])).unwrap();
        ReduceKind::Sum.apply(ElementKind::F64, &mut acc, &f64s(&[0.3, 1.0])).unwrap();
        assert_eq!(acc, f64s(&[(0.1 + 0.2) + 0.3, 7.0]));

        let mut acc = 5i32.to_le_bytes().to_vec();
        ReduceKind::Max.apply(ElementKind::I32, &mut acc, &9i32.to_le_bytes()).unwrap();
        ReduceKind::Max.apply(ElementKind::I32, &mut acc, &2i32.to_le_bytes()).unwrap();
        assert_eq!(acc, 9i32.to_le_bytes());

        let mut acc = i64::MAX.to_le_bytes().to_vec();
        ReduceKind::Sum.apply(ElementKind::I64, &mut acc, &1i64.to_le_bytes()).unwrap();
        assert_eq!(acc, i64::MIN.to_le_bytes());

        let mut acc = vec![1u8];
        assert!(matches!(
            ReduceKind::Sum.apply(ElementKind::Byte, &mut acc, &[2]),
            Err(Error::KindMismatch(_))
        ));
    }

    #[test]
    fn communicator_rank_maps() {
        let c = Communicator { context_id: 3, group: vec![2, 0], my_rank: 1 };
        assert_eq!(c.world_rank_of(0), Some(2));
        assert_eq!(c.comm_rank_of(0), Some(1));
        assert_eq!(c.comm_rank_of(1), None);
        assert_ne!(c.p2p_context(), c.collective_context());
    }
}
