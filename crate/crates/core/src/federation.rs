//! A registry, a shared quote desk and the instances hosted in-process.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};

use crate::delivery::Delivery;
use crate::error::{Error, ErrorCode, Result};
use crate::ids::ThreadId;
use crate::instance::Instance;
use crate::quoting::{NegotiationThread, QuoteDesk};
use crate::registry::RegistryService;

pub struct Federation {
    pub registry: Arc<RegistryService>,
    pub desk: QuoteDesk,
    instances: BTreeMap<String, Arc<Instance>>,
}

impl Federation {
    pub fn new(registry: Arc<RegistryService>, desk: QuoteDesk) -> Self {
        Self {
            registry,
            desk,
            instances: BTreeMap::new(),
        }
    }

    pub fn host(&mut self, inst: Arc<Instance>) {
        self.instances.insert(inst.domain().to_owned(), inst);
    }

    pub fn instance(&self, domain: &str) -> Result<&Arc<Instance>> {
        self.instances.get(domain).ok_or_else(|| {
            Error::new(ErrorCode::UnknownInstance, format!("{domain} is not hosted here"))
        })
    }

    pub fn instances(&self) -> impl Iterator<Item = &Arc<Instance>> {
        self.instances.values()
    }

    /// Finalizes an accepted thread and hands the delivery to its instance.
    pub fn finalize(&self, thread: &ThreadId, at: DateTime<Utc>) -> Result<(NegotiationThread, Delivery)> {
        let t = self.desk.get(thread)?;
        let inst = self.instance(&t.instance_domain)?.clone();
        let (t, d) = self.desk.finalize(thread, at)?;
        let d = inst.accept_delivery(d, at)?;
        Ok((t, d))
    }
}
