"""Auth Shim: broker enterprise SAML logins into a standalone application's
own users, roles and sessions."""

__version__ = "0.1.0"
