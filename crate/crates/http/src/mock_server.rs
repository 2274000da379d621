use std::sync::Arc;

use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, put};
use axum::{Json, Router};
use fedprov_core::backend::{BackendError, IdentityBackend, RoleScope, UserUpdate};
use fedprov_core::{LocalUserSpec, MockBackend};

use crate::wire::{
    ErrorBody, NewProject, NewRole, NewUser, ProjectEnvelope, Projects, RoleEnvelope, Roles,
    User, UserEnvelope, UserPatch, Users,
};

#[derive(Clone)]
struct MockState {
    backend: Arc<MockBackend>,
    token: Option<Arc<str>>,
}

struct ApiError(BackendError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody::from_backend(&self.0);
        let status = StatusCode::from_u16(body.error.code).unwrap_or(StatusCode::BAD_GATEWAY);
        (status, Json(body)).into_response()
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        ApiError(e)
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Keystone v3 subset over a [`MockBackend`].
///
/// With `token` set, every request must carry `Authorization: Bearer
/// <token>` (or `X-Auth-Token: <token>`); others get 401.
pub fn mock_router(backend: Arc<MockBackend>, token: Option<String>) -> Router {
    let state = MockState {
        backend,
        token: token.map(Into::into),
    };
    Router::new()
        .route("/v3/users", get(list_users).post(create_user))
        .route("/v3/users/{id}", patch(update_user))
        .route("/v3/projects", get(list_projects).post(create_project))
        .route("/v3/roles", get(list_roles).post(create_role))
        .route("/v3/projects/{p}/users/{u}/roles", get(assigned_roles))
        .route(
            "/v3/projects/{p}/users/{u}/roles/{r}",
            put(grant).delete(revoke),
        )
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<MockState>, req: Request, next: Next) -> Response {
    let Some(expected) = state.token.as_deref() else {
        return next.run(req).await;
    };
    let headers = req.headers();
    let bearer = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let x_auth = headers.get("X-Auth-Token").and_then(|v| v.to_str().ok());
    if bearer == Some(expected) || x_auth == Some(expected) {
        return next.run(req).await;
    }
    let body = ErrorBody {
        error: crate::wire::ErrorDetail {
            code: 401,
            title: "Unauthorized".into(),
            message: "missing or invalid token".into(),
            kind: None,
            target: None,
        },
    };
    (StatusCode::UNAUTHORIZED, Json(body)).into_response()
}

async fn list_users(State(s): State<MockState>) -> ApiResult<Json<Users>> {
    let users = s.backend.users_list()?;
    Ok(Json(Users {
        users: users.into_iter().map(User::from).collect(),
    }))
}

async fn create_user(
    State(s): State<MockState>,
    Json(body): Json<UserEnvelope<NewUser>>,
) -> ApiResult<(StatusCode, Json<UserEnvelope<User>>)> {
    let new = body.user;
    let spec = LocalUserSpec {
        name: new.name,
        domain_id: new.domain_id,
        user_type: "local".into(),
    };
    let mut user = s.backend.users_create(&spec, new.email.as_deref())?;
    if !new.enabled {
        user = s.backend.users_update(
            &user.id,
            &UserUpdate {
                mail: None,
                enabled: Some(false),
            },
        )?;
    }
    Ok((StatusCode::CREATED, Json(UserEnvelope { user: user.into() })))
}

async fn update_user(
    State(s): State<MockState>,
    Path(id): Path<String>,
    Json(body): Json<UserEnvelope<UserPatch>>,
) -> ApiResult<Json<UserEnvelope<User>>> {
    let update = UserUpdate {
        mail: body.user.email,
        enabled: body.user.enabled,
    };
    let user = s.backend.users_update(&id, &update)?;
    Ok(Json(UserEnvelope { user: user.into() }))
}

async fn list_projects(State(s): State<MockState>) -> ApiResult<Json<Projects>> {
    Ok(Json(Projects {
        projects: s.backend.projects_list()?,
    }))
}

async fn create_project(
    State(s): State<MockState>,
    Json(body): Json<ProjectEnvelope<NewProject>>,
) -> ApiResult<impl IntoResponse> {
    let project = s
        .backend
        .projects_create(&body.project.name, &body.project.domain_id)?;
    Ok((StatusCode::CREATED, Json(ProjectEnvelope { project })))
}

async fn list_roles(State(s): State<MockState>) -> ApiResult<Json<Roles>> {
    Ok(Json(Roles {
        roles: s.backend.roles_list(&RoleScope::All)?,
    }))
}

async fn create_role(
    State(s): State<MockState>,
    Json(body): Json<RoleEnvelope<NewRole>>,
) -> ApiResult<impl IntoResponse> {
    let role = s.backend.roles_create(&body.role.name)?;
    Ok((StatusCode::CREATED, Json(RoleEnvelope { role })))
}

async fn assigned_roles(
    State(s): State<MockState>,
    Path((project_id, user_id)): Path<(String, String)>,
) -> ApiResult<Json<Roles>> {
    let roles = s.backend.roles_list(&RoleScope::Assigned {
        user_id,
        project_id,
    })?;
    Ok(Json(Roles { roles }))
}

async fn grant(
    State(s): State<MockState>,
    Path((p, u, r)): Path<(String, String, String)>,
) -> ApiResult<StatusCode> {
    s.backend.roles_grant(&u, &r, &p)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn revoke(
    State(s): State<MockState>,
    Path((p, u, r)): Path<(String, String, String)>,
) -> ApiResult<StatusCode> {
    s.backend.roles_revoke(&u, &r, &p)?;
    Ok(StatusCode::NO_CONTENT)
}
