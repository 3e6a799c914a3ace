// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

//! Function registration: verify, allocate an id and a port, build the image.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::verifier::{self, Rejection, Verdict, VerifierConfig};
use crate::vm::image::{FunctionImage, ImageError};
use crate::vm::isa::Instruction;

/// First port handed to a registered function.
pub const FUNCTION_PORT_BASE: u16 = 9000;
/// Reserved destination port for trusted suspended state moving between runtimes.
pub const MIGRATION_PORT: u16 = 8999;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegisterError {
    #[error("verification failed: {0}")]
    VerificationFailed(Rejection),
    #[error("function port range exhausted")]
    PortExhausted,
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Installed functions, shared read-only by every node's switch.
#[derive(Debug, Clone)]
pub struct FunctionRegistry {
    by_port: BTreeMap<u16, Arc<FunctionImage>>,
    by_id: BTreeMap<u32, Arc<FunctionImage>>,
    next_id: u32,
    next_port: u16,
    port_end: u16,
    verifier: VerifierConfig,
}

impl Default for FunctionRegistry {
    fn default() -> Self {
        Self::new(VerifierConfig::default())
    }
}

impl FunctionRegistry {
    pub fn new(verifier: VerifierConfig) -> Self {
        Self::with_ports(verifier, FUNCTION_PORT_BASE, u16::MAX)
    }

    /// Ports `[base, end)` are available for functions.
    pub fn with_ports(verifier: VerifierConfig, base: u16, end: u16) -> Self {
        Self {
            by_port: BTreeMap::new(),
            by_id: BTreeMap::new(),
            next_id: 1,
            next_port: base,
            port_end: end,
            verifier,
        }
    }

    pub fn register_function(
        &mut self,
        bytecode: &[Instruction],
        allowed_regions: BTreeSet<u8>,
    ) -> Result<(u32, u16), RegisterError> {
        let report = verifier::verify_with(bytecode, &self.verifier);
        if let Verdict::Rejected(r) = report.verdict {
            return Err(RegisterError::VerificationFailed(r));
        }
        if self.next_port >= self.port_end || self.next_port == MIGRATION_PORT {
            return Err(RegisterError::PortExhausted);
        }
        let (id, port) = (self.next_id, self.next_port);
        let img = Arc::new(FunctionImage::from_parts(
            id,
            port,
            bytecode.to_vec(),
            report.yield_vectors,
            allowed_regions,
        )?);
        self.install(img);
        Ok((id, port))
    }

    /// Installs a prebuilt image (deserialized on a data-plane node, or
    /// deliberately malformed in tests). No verification.
    pub fn install(&mut self, img: Arc<FunctionImage>) {
        self.next_id = self.next_id.max(img.function_id() + 1);
        self.next_port = self.next_port.max(img.udp_port().saturating_add(1));
        self.by_port.insert(img.udp_port(), img.clone());
        self.by_id.insert(img.function_id(), img);
    }

    pub fn by_port(&self, port: u16) -> Option<&Arc<FunctionImage>> {
        self.by_port.get(&port)
    }

    pub fn by_id(&self, id: u32) -> Option<&Arc<FunctionImage>> {
        self.by_id.get(&id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &Arc<FunctionImage>> {
        self.by_id.values()
    }
}
