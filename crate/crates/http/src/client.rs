use std::time::Duration;

use fedprov_core::backend::{
    BackendError, BackendProject, BackendRole, BackendUser, EntityKind, IdentityBackend,
    RoleScope, UserUpdate,
};
use fedprov_core::LocalUserSpec;
use serde::de::DeserializeOwned;
use ureq::http::Response;
use ureq::{Agent, Body};
use url::Url;

use crate::wire::{
    ErrorBody, NewProject, NewRole, NewUser, ProjectEnvelope, Projects, RoleEnvelope, Roles,
    User, UserEnvelope, UserPatch, Users,
};

/// [`IdentityBackend`] over a Keystone-v3-compatible REST endpoint.
///
/// Blocking. Transport failures and timeouts surface as
/// [`BackendError::Unavailable`], so the hook fails closed.
#[derive(Debug, Clone)]
pub struct KeystoneClient {
    base: Url,
    token: String,
    agent: Agent,
}

impl KeystoneClient {
    pub fn new(endpoint: &str, token: &str, timeout: Duration) -> Result<Self, BackendError> {
        let base = Url::parse(endpoint)
            .map_err(|e| BackendError::InvalidRequest(format!("endpoint `{endpoint}`: {e}")))?;
        if base.cannot_be_a_base() {
            return Err(BackendError::InvalidRequest(format!(
                "endpoint `{endpoint}` cannot be a base URL"
            )));
        }
        let agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .max_redirects(0)
            .build()
            .into();
        Ok(Self {
            base,
            token: token.to_owned(),
            agent,
        })
    }

    fn url(&self, segments: &[&str]) -> String {
        let mut url = self.base.clone();
        url.path_segments_mut()
            .expect("checked in new")
            .pop_if_empty()
            .push("v3")
            .extend(segments);
        url.into()
    }

    fn auth(&self) -> String {
        format!("Bearer {}", self.token)
    }

    fn get<T: DeserializeOwned>(&self, segments: &[&str], ctx: Ctx) -> Result<T, BackendError> {
        let resp = self
            .agent
            .get(self.url(segments))
            .header("Authorization", self.auth())
            .header("Accept", "application/json")
            .call()
            .map_err(transport)?;
        json(check(resp, ctx)?)
    }

    fn post<T: DeserializeOwned>(
        &self,
        segments: &[&str],
        body: impl serde::Serialize,
        ctx: Ctx,
    ) -> Result<T, BackendError> {
        let resp = self
            .agent
            .post(self.url(segments))
            .header("Authorization", self.auth())
            .send_json(body)
            .map_err(transport)?;
        json(check(resp, ctx)?)
    }

    fn grant_path<'a>(&self, user_id: &'a str, role_id: &'a str, project_id: &'a str) -> String {
        self.url(&["projects", project_id, "users", user_id, "roles", role_id])
    }
}

/// What a request was about, for turning 404/409 into typed errors when
/// the server does not say.
#[derive(Clone, Copy)]
struct Ctx<'a> {
    kind: EntityKind,
    target: &'a str,
}

fn ctx(kind: EntityKind, target: &str) -> Ctx<'_> {
    Ctx { kind, target }
}

fn transport(err: ureq::Error) -> BackendError {
    BackendError::Unavailable(err.to_string())
}

fn check(mut resp: Response<Body>, ctx: Ctx) -> Result<Response<Body>, BackendError> {
    let status = resp.status().as_u16();
    if (200..300).contains(&status) {
        return Ok(resp);
    }
    let detail = resp
        .body_mut()
        .read_json::<ErrorBody>()
        .ok()
        .map(|b| b.error);
    let message = detail
        .as_ref()
        .map(|d| d.message.clone())
        .unwrap_or_else(|| format!("HTTP {status}"));
    let kind = detail.as_ref().and_then(|d| d.kind).unwrap_or(ctx.kind);
    let target = detail
        .and_then(|d| d.target)
        .unwrap_or_else(|| ctx.target.to_owned());
    Err(match status {
        409 => BackendError::Conflict { kind, name: target },
        404 => BackendError::UnknownEntity { kind, id: target },
        400 | 422 => BackendError::InvalidRequest(message),
        401 | 403 => BackendError::Unavailable(format!("backend rejected credentials: {message}")),
        _ => BackendError::Unavailable(format!("HTTP {status}: {message}")),
    })
}

fn json<T: DeserializeOwned>(mut resp: Response<Body>) -> Result<T, BackendError> {
    resp.body_mut()
        .read_json()
        .map_err(|e| BackendError::Unavailable(format!("malformed response: {e}")))
}

impl IdentityBackend for KeystoneClient {
    fn users_list(&self) -> Result<Vec<BackendUser>, BackendError> {
        let users: Users = self.get(&["users"], ctx(EntityKind::User, ""))?;
        Ok(users.users.into_iter().map(Into::into).collect())
    }

    fn roles_list(&self, scope: &RoleScope) -> Result<Vec<BackendRole>, BackendError> {
        let roles: Roles = match scope {
            RoleScope::All => self.get(&["roles"], ctx(EntityKind::Role, ""))?,
            RoleScope::Assigned {
                user_id,
                project_id,
            } => self.get(
                &["projects", project_id, "users", user_id, "roles"],
                ctx(EntityKind::Project, project_id),
            )?,
        };
        Ok(roles.roles)
    }

    fn projects_list(&self) -> Result<Vec<BackendProject>, BackendError> {
        let projects: Projects = self.get(&["projects"], ctx(EntityKind::Project, ""))?;
        Ok(projects.projects)
    }

    fn projects_create(&self, name: &str, domain_id: &str) -> Result<BackendProject, BackendError> {
        let body = ProjectEnvelope {
            project: NewProject {
                name: name.into(),
                domain_id: domain_id.into(),
            },
        };
        let created: ProjectEnvelope<BackendProject> =
            self.post(&["projects"], body, ctx(EntityKind::Project, name))?;
        Ok(created.project)
    }

    fn roles_create(&self, name: &str) -> Result<BackendRole, BackendError> {
        let body = RoleEnvelope {
            role: NewRole { name: name.into() },
        };
        let created: RoleEnvelope<BackendRole> =
            self.post(&["roles"], body, ctx(EntityKind::Role, name))?;
        Ok(created.role)
    }

    fn users_create(
        &self,
        spec: &LocalUserSpec,
        mail: Option<&str>,
    ) -> Result<BackendUser, BackendError> {
        let body = UserEnvelope {
            user: NewUser {
                name: spec.name.clone(),
                domain_id: spec.domain_id.clone(),
                email: mail.map(str::to_owned),
                enabled: true,
            },
        };
        let created: UserEnvelope<User> =
            self.post(&["users"], body, ctx(EntityKind::User, &spec.name))?;
        Ok(created.user.into())
    }

    fn roles_grant(&self, user_id: &str, role_id: &str, project_id: &str) -> Result<(), BackendError> {
        let resp = self
            .agent
            .put(self.grant_path(user_id, role_id, project_id))
            .header("Authorization", self.auth())
            .send_empty()
            .map_err(transport)?;
        check(resp, ctx(EntityKind::User, user_id)).map(drop)
    }

    fn roles_revoke(&self, user_id: &str, role_id: &str, project_id: &str) -> Result<(), BackendError> {
        let resp = self
            .agent
            .delete(self.grant_path(user_id, role_id, project_id))
            .header("Authorization", self.auth())
            .call()
            .map_err(transport)?;
        check(resp, ctx(EntityKind::User, user_id)).map(drop)
    }

    fn users_update(&self, user_id: &str, update: &UserUpdate) -> Result<BackendUser, BackendError> {
        let body = UserEnvelope {
            user: UserPatch {
                email: update.mail.clone(),
                enabled: update.enabled,
            },
        };
        let resp = self
            .agent
            .patch(self.url(&["users", user_id]))
            .header("Authorization", self.auth())
            .send_json(body)
            .map_err(transport)?;
        let updated: UserEnvelope<User> = json(check(resp, ctx(EntityKind::User, user_id))?)?;
        Ok(updated.user.into())
    }
}
