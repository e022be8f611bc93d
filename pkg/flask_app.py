#!/usr/bin/env python3
"""
Flask web application for rftrack
Answers "where is this object?" over a finished run directory
"""

import json
import logging
import os

import pandas as pd
from flask import Flask, jsonify, render_template_string

from core_model import NONE, TagKind, external_id, parse_external

# Get logger
logger = logging.getLogger('rftrack.web')

MANIFEST = 'manifest.json'
ESTIMATES = 'estimates.csv'
LEDGER = 'ledger.csv'
ALERTS = 'alerts.csv'
CHANGES = 'changes.csv'


class RunWebApp:
    """Flask application serving the results of one run"""

    def __init__(self, run_dir, config):
        self.run_dir = run_dir
        self.config = config
        self.app = Flask(__name__)

        # Configure Flask
        self.app.config['DEBUG'] = config.get('server', 'flask_debug')

        # Register routes
        self._register_routes()

    def _path(self, name):
        return os.path.join(self.run_dir, name)

    def _table(self, name):
        """A result table of the run, or None if the run did not produce it"""
        path = self._path(name)
        if not os.path.exists(path):
            return None
        return pd.read_csv(path)

    def _register_routes(self):
        """Register Flask routes"""

        @self.app.route('/')
        def index():
            """Serve status page"""
            return self._render_status_page()

        @self.app.route('/api/status')
        def api_status():
            return jsonify(self._get_status_data())

        @self.app.route('/api/objects/<int:tag_id>')
        def api_object(tag_id):
            data = self._locate(tag_id)
            if data is None:
                return jsonify({'error': f'Unknown tag {tag_id}'}), 404
            return jsonify(data)

        @self.app.route('/api/ledger')
        def api_ledger():
            return jsonify(self._records(LEDGER))

        @self.app.route('/api/alerts')
        def api_alerts():
            return jsonify(self._records(ALERTS))

    def _records(self, name):
        table = self._table(name)
        return [] if table is None else table.to_dict(orient='records')

    def _latest(self):
        estimates = self._table(ESTIMATES)
        if estimates is None or estimates.empty:
            return None
        return estimates.sort_values('t').groupby(['site', 'object']).tail(1)

    def _locate(self, tag_id):
        """Latest estimate per site for an object, or the latest contents of a container"""
        latest = self._latest()
        if latest is None:
            return None
        tag = parse_external(tag_id)
        if tag.kind is TagKind.CONTAINER:
            inside = latest[latest['container'] == tag.id]
            if inside.empty:
                return None
            newest = inside[inside['t'] == inside['t'].max()]
            return {
                'tag_id': tag_id,
                'kind': 'container',
                't': int(newest['t'].iloc[0]),
                'members': [external_id(TagKind.OBJECT, int(o)) for o in sorted(newest['object'])],
            }
        rows = latest[latest['object'] == tag.id].sort_values('t')
        if rows.empty:
            return None
        estimates = []
        for row in rows.itertuples(index=False):
            container = int(row.container)
            estimates.append({
                'site': int(row.site),
                't': int(row.t),
                'location': int(row.location),
                'container': None if container == NONE else external_id(TagKind.CONTAINER, container),
                'confident': bool(row.confident),
            })
        return {'tag_id': tag_id, 'kind': 'object', 'current': estimates[-1], 'sites': estimates}

    def _get_status_data(self):
        """Summary of the run manifest and result tables"""
        manifest = {}
        if os.path.exists(self._path(MANIFEST)):
            with open(self._path(MANIFEST)) as f:
                manifest = json.load(f)
        latest = self._latest()
        ledger = self._table(LEDGER)
        alerts = self._table(ALERTS)
        changes = self._table(CHANGES)
        return {
            'run_dir': self.run_dir,
            'command': manifest.get('command'),
            'strategy': manifest.get('strategy'),
            'seed': manifest.get('seed'),
            'objects_tracked': 0 if latest is None else int(latest['object'].nunique()),
            'last_batch': None if latest is None else int(latest['t'].max()),
            'total_bytes': None if ledger is None or ledger.empty else int(ledger['bytes'].sum()),
            'alerts': 0 if alerts is None else len(alerts),
            'change_points': 0 if changes is None else len(changes),
            'versions': manifest.get('versions', {}),
        }

    def _render_status_page(self):
        """Render the status page"""
        status = self._get_status_data()

        template = """
<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <title>rftrack - {{ run_dir }}</title>
    <style>
        body { font-family: -apple-system, BlinkMacSystemFont, 'Segoe UI', Roboto, sans-serif;
               background: #f4f5f7; padding: 20px; }
        .container { background: white; border-radius: 12px; padding: 30px; max-width: 800px;
                     margin: 0 auto; box-shadow: 0 4px 20px rgba(0, 0, 0, 0.1); }
        .status-grid { display: grid; grid-template-columns: repeat(auto-fit, minmax(200px, 1fr)); gap: 16px; }
        .stat-card { background: #f8f9fa; padding: 16px; border-radius: 8px; border-left: 4px solid #3f6ad8; }
        .stat-label { font-weight: 600; color: #666; font-size: 0.85em; text-transform: uppercase; }
        .stat-value { color: #333; font-size: 1.3em; }
        .api-links a { color: #3f6ad8; margin-right: 15px; }
    </style>
</head>
<body>
    <div class="container">
        <h1>rftrack run</h1>
        <p>{{ run_dir }}{% if command %} &middot; {{ command }}{% endif %}{% if strategy %} &middot; strategy {{ strategy }}{% endif %}</p>
        <div class="status-grid">
            <div class="stat-card"><div class="stat-label">Objects tracked</div>
                <div class="stat-value">{{ objects_tracked }}</div></div>
            <div class="stat-card"><div class="stat-label">Last batch</div>
                <div class="stat-value">{{ last_batch if last_batch is not none else '-' }}</div></div>
            <div class="stat-card"><div class="stat-label">Bytes migrated</div>
                <div class="stat-value">{{ total_bytes if total_bytes is not none else '-' }}</div></div>
            <div class="stat-card"><div class="stat-label">Alerts</div>
                <div class="stat-value">{{ alerts }}</div></div>
            <div class="stat-card"><div class="stat-label">Change points</div>
                <div class="stat-value">{{ change_points }}</div></div>
        </div>
        <div class="api-links">
            <h3>API Endpoints</h3>
            <a href="/api/status">Status JSON</a>
            <a href="/api/ledger">Cost ledger</a>
            <a href="/api/alerts">Alerts</a>
        </div>
    </div>
</body>
</html>
        """

        return render_template_string(template, **status)

    def get_app(self):
        """Get the Flask application"""
        return self.app
