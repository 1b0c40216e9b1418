use std::sync::Arc;

use crate::backends::{BackendError, ChatClient, ChatRequest, ChatResponse};
use crate::prompts::{self, Task};

/// A chat client plus the generation settings every prompt is sent with.
pub struct Judge {
    pub client: Arc<ChatClient>,
    pub model_id: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
}

impl Judge {
    pub fn new(client: Arc<ChatClient>, model_id: impl Into<String>) -> Self {
        Self {
            client,
            model_id: model_id.into(),
            temperature: crate::backends::DEFAULT_TEMPERATURE,
            seed: crate::backends::DEFAULT_SEED,
            max_tokens: crate::backends::DEFAULT_MAX_TOKENS,
        }
    }

    pub fn request(&self, task: Task, user_prompt: String) -> ChatRequest {
        ChatRequest {
            model_id: self.model_id.clone(),
            system_prompt: task.system_prompt().to_string(),
            user_prompt,
            temperature: self.temperature,
            seed: self.seed,
            max_tokens: self.max_tokens,
        }
    }

    pub fn ask(&self, task: Task, user_prompt: String) -> Result<ChatResponse, BackendError> {
        self.client.complete(&self.request(task, user_prompt))
    }

    /// Same settings, with a format reminder appended. Used for the single
    /// retry after an unparseable reply; the changed prompt gets its own
    /// cache entry.
    pub fn ask_again(&self, task: Task, user_prompt: &str) -> Result<ChatResponse, BackendError> {
        self.ask(task, prompts::with_reminder(user_prompt, task))
    }

    pub fn backend_calls(&self) -> usize {
        self.client.backend_calls()
    }
}
