from rest_framework import renderers
from rest_framework_csv.renderers import CSVRenderer

from cryptogen.src.entity.constants import ReportFormat


class OrderedCSVRenderer(CSVRenderer):
	"""CSV с заданным порядком столбцов; вложенные словари разворачиваются в столбцы через точку"""

	def __init__(self, header=None):
		self.header = header


class MarkdownTableRenderer(renderers.BaseRenderer):
	media_type = 'text/markdown'
	format = 'md'
	charset = 'utf-8'

	def __init__(self, header=None):
		self.header = header

	def render(self, data, accepted_media_type=None, renderer_context=None):
		rows = list(data or [])
		header = (renderer_context or {}).get('header') or self.header or (list(rows[0]) if rows else [])
		lines = [
			'| ' + ' | '.join(header) + ' |',
			'|' + ' --- |' * len(header),
		]
		for row in rows:
			cells = ('' if row.get(column) is None else str(row.get(column)) for column in header)
			lines.append('| ' + ' | '.join(cells) + ' |')
		return ('\n'.join(lines) + '\n').encode(self.charset)


class ReportJSONRenderer(renderers.JSONRenderer):
	def render(self, data, accepted_media_type=None, renderer_context=None):
		context = {'indent': 2, **(renderer_context or {})}
		return super().render(data, accepted_media_type, context) + b'\n'


RENDERERS = {
	ReportFormat.JSON.value: ReportJSONRenderer,
	ReportFormat.CSV.value: OrderedCSVRenderer,
	ReportFormat.MARKDOWN.value: MarkdownTableRenderer,
}


def render(data, fmt: str, header=None) -> bytes:
	if fmt == ReportFormat.JSON.value:
		return RENDERERS[fmt]().render(data)
	content = RENDERERS[fmt](header=header).render(data)
	return content.encode('utf-8') if isinstance(content, str) else content
