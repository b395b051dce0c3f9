use std::sync::Arc;

use super::{
    fingerprint, Answerer, ClientError, Detection, Detector, DimGuard, Fixture, FixtureResponse,
    FrameRef, Op, Summarizer, TextEncoder,
};

/// Deterministic stand-in for every model role, replaying a [`Fixture`].
///
/// In strict mode (the default) a request without a fixture entry fails with
/// [`ClientError::MissingFixture`] naming its fingerprint. This client has no
/// network code at all.
#[derive(Debug, Clone)]
pub struct ScriptedClient {
    fixture: Arc<Fixture>,
    fallback: Option<FixtureResponse>,
    detect_dim: Arc<DimGuard>,
    embed_dim: Arc<DimGuard>,
}

impl ScriptedClient {
    pub fn new(fixture: Fixture) -> Self {
        Self::shared(Arc::new(fixture))
    }

    pub fn shared(fixture: Arc<Fixture>) -> Self {
        Self {
            fixture,
            fallback: None,
            detect_dim: Arc::default(),
            embed_dim: Arc::default(),
        }
    }

    /// Answers unmatched requests with `response` instead of failing.
    pub fn with_fallback(mut self, response: FixtureResponse) -> Self {
        self.fallback = Some(response);
        self
    }

    pub fn fixture(&self) -> &Fixture {
        &self.fixture
    }

    fn respond(&self, op: Op, text: &str, frames: &[FrameRef]) -> Result<&FixtureResponse, ClientError> {
        let fp = fingerprint(op, text, frames);
        match self.fixture.lookup(&fp).or(self.fallback.as_ref()) {
            Some(FixtureResponse::Error { error }) => Err(ClientError::Remote(error.clone())),
            Some(r) => Ok(r),
            None => Err(ClientError::MissingFixture { fingerprint: fp }),
        }
    }
}

fn wrong_shape(op: Op, got: &FixtureResponse) -> ClientError {
    ClientError::Protocol(format!("fixture reply for {} has the wrong shape: {got:?}", op.as_str()))
}

impl Summarizer for ScriptedClient {
    fn summarize(&self, frames: &[FrameRef], instruction: &str) -> Result<String, ClientError> {
        if frames.is_empty() {
            return Err(ClientError::InvalidArgument("summarize needs at least one frame".into()));
        }
        match self.respond(Op::Summarize, instruction, frames)? {
            FixtureResponse::Content { content } => Ok(content.clone()),
            other => Err(wrong_shape(Op::Summarize, other)),
        }
    }
}

impl Detector for ScriptedClient {
    fn detect(&self, image: &FrameRef) -> Result<Vec<Detection>, ClientError> {
        match self.respond(Op::Detect, "", std::slice::from_ref(image))? {
            FixtureResponse::Detections { detections } => {
                for d in detections {
                    self.detect_dim.check("detector", d.embedding.len())?;
                }
                Ok(detections.clone())
            }
            other => Err(wrong_shape(Op::Detect, other)),
        }
    }
}

impl TextEncoder for ScriptedClient {
    fn embed_text(&self, term: &str) -> Result<Vec<f32>, ClientError> {
        if term.trim().is_empty() {
            return Err(ClientError::InvalidArgument("cannot embed an empty term".into()));
        }
        match self.respond(Op::EmbedText, term, &[])? {
            FixtureResponse::Embedding { embedding } => {
                self.embed_dim.check("text encoder", embedding.len())?;
                Ok(embedding.clone())
            }
            other => Err(wrong_shape(Op::EmbedText, other)),
        }
    }
}

impl Answerer for ScriptedClient {
    fn answer_chat(&self, prompt: &str, frames: &[FrameRef]) -> Result<String, ClientError> {
        match self.respond(Op::AnswerChat, prompt, frames)? {
            FixtureResponse::Content { content } => Ok(content.clone()),
            other => Err(wrong_shape(Op::AnswerChat, other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::visual::BBox;

    fn det(dim: usize) -> Detection {
        Detection {
            bbox: BBox::new(0.1, 0.2, 0.3, 0.4).unwrap(),
            score: 0.8,
            embedding: vec![0.5; dim],
        }
    }

    #[test]
    fn replays_canned_replies() {
        let frame = FrameRef::video_frame("v", 0, "v/0.jpg");
        let mut fx = Fixture::new();
        fx.insert(Op::Summarize, "describe", &[frame.clone()], FixtureResponse::Content { content: "{}".into() });
        fx.insert(Op::AnswerChat, "prompt", &[], FixtureResponse::Content { content: "B".into() });
        let c = ScriptedClient::new(fx);
        assert_eq!(c.summarize(&[frame], "describe").unwrap(), "{}");
        assert_eq!(c.answer_chat("prompt", &[]).unwrap(), "B");
    }

    #[test]
    fn strict_mock_names_the_fingerprint() {
        let c = ScriptedClient::new(Fixture::new());
        let err = c.answer_chat("unknown", &[]).unwrap_err();
        let expected = fingerprint(Op::AnswerChat, "unknown", &[]);
        assert_eq!(err, ClientError::MissingFixture { fingerprint: expected.clone() });
        assert!(err.to_string().contains(&expected));
    }

    #[test]
    fn detections_verbatim_and_dim_drift() {
        let f1 = FrameRef::video_frame("v", 0, "a");
        let f2 = FrameRef::video_frame("v", 1000, "b");
        let f3 = FrameRef::video_frame("v", 2000, "c");
        let mut fx = Fixture::new();
        fx.insert(Op::Detect, "", &[f1.clone()], FixtureResponse::Detections { detections: vec![det(4), det(4)] });
        fx.insert(Op::Detect, "", &[f2.clone()], FixtureResponse::Detections { detections: vec![] });
        fx.insert(Op::Detect, "", &[f3.clone()], FixtureResponse::Detections { detections: vec![det(8)] });
        let c = ScriptedClient::new(fx);
        assert_eq!(c.detect(&f1).unwrap(), vec![det(4), det(4)]);
        assert!(c.detect(&f2).unwrap().is_empty());
        assert!(matches!(c.detect(&f3), Err(ClientError::Protocol(_))));
    }

    #[test]
    fn embeddings_are_deterministic() {
        let mut fx = Fixture::new();
        fx.insert(Op::EmbedText, "mug", &[], FixtureResponse::Embedding { embedding: vec![1.0, 0.0] });
        let c = ScriptedClient::new(fx);
        assert_eq!(c.embed_text("mug").unwrap(), vec![1.0, 0.0]);
        assert_eq!(c.embed_text("mug").unwrap(), c.embed_text("mug").unwrap());
        assert!(matches!(c.embed_text(""), Err(ClientError::InvalidArgument(_))));
    }

    #[test]
    fn error_entries_surface_as_retryable_remote_errors() {
        let mut fx = Fixture::new();
        fx.insert(Op::AnswerChat, "p", &[], FixtureResponse::Error { error: "overloaded".into() });
        let err = ScriptedClient::new(fx).answer_chat("p", &[]).unwrap_err();
        assert!(err.is_retryable());
    }
}
